use std::f64::consts::SQRT_2;

use proptest::prelude::*;

use super::*;
use crate::Error;

fn cfg() -> EnvConfig {
    EnvConfig::default()
}

fn centered(scene: &SceneGrid, col: usize, row: usize, theta: u32) -> Pose {
    let (x, y) = scene.center(scene.index(col, row));
    Pose::new(x, y, theta)
}

fn single_goal(scene: &SceneGrid, start: Pose, goal: (usize, usize), budget: usize) -> EpisodeSpec {
    EpisodeSpec {
        scene: scene.id.clone(),
        start,
        goals: vec![Goal { cell: scene.index(goal.0, goal.1), category: 0 }],
        budget,
    }
}

#[test]
fn scenes_are_connected_sealed_and_deterministic() {
    for style in [SceneStyle::Open, SceneStyle::Pillars, SceneStyle::Rooms] {
        let a = generate_scene(0, 16, 16, style, 0.8).unwrap();
        let b = generate_scene(0, 16, 16, style, 0.8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.free_components(), 1);
        assert!(a.border_sealed());
    }
    let a = generate_scene(1, 32, 32, SceneStyle::Rooms, 0.8).unwrap();
    let b = generate_scene(2, 32, 32, SceneStyle::Rooms, 0.8).unwrap();
    assert_ne!(a.occupancy, b.occupancy);
}

#[test]
fn many_room_scenes_stay_connected() {
    for seed in 0..1000 {
        let g = generate_scene(seed, 32, 32, SceneStyle::Rooms, 0.8).unwrap();
        assert_eq!(g.free_components(), 1, "seed {seed}");
        assert!(g.border_sealed());
    }
}

#[test]
fn small_scene_is_rejected() {
    assert!(matches!(generate_scene(0, 7, 16, SceneStyle::Open, 0.8), Err(Error::Parameter(_))));
}

#[test]
fn rle_round_trip() {
    let g = generate_scene(5, 20, 12, SceneStyle::Rooms, 0.8).unwrap();
    let s = encode_rle(&g.occupancy);
    assert_eq!(decode_rle(&s, g.len()).unwrap(), g.occupancy);
    assert!(s.starts_with("21X"));
    assert!(matches!(decode_rle("3F2Q", 5), Err(Error::Data(_))));
    assert!(matches!(decode_rle("3F", 5), Err(Error::Data(_))));
}

#[test]
fn adjacent_and_diagonal_geodesics() {
    let g = SceneGrid::open(8, 8, 0.8);
    let a = g.index(3, 3);
    assert_eq!(geodesic_distance(&g, Endpoint::Cell(a), g.index(4, 3)).unwrap(), 0.8);
    assert_eq!(geodesic_distance(&g, Endpoint::Cell(a), g.index(4, 4)).unwrap(), SQRT_2 * 0.8);
    assert_eq!(geodesic_distance(&g, Endpoint::Cell(a), a).unwrap(), 0.0);
    assert!(matches!(geodesic_distance(&g, Endpoint::Cell(0), a), Err(Error::Parameter(_))));
}

#[test]
fn geodesic_detours_around_wall() {
    let g = SceneGrid::from_rows(&["XXXXX", "X...X", "X.#.X", "X...X", "XXXXX"], 1.0).unwrap();
    let from = g.index(1, 2);
    let to = g.index(3, 2);
    // diagonals touching the pillar are illegal, so the detour is four straight steps
    let d = geodesic_distance(&g, Endpoint::Cell(from), to).unwrap();
    assert_eq!(d, 4.0);
}

#[test]
fn pose_geodesic_is_exact_at_centres() {
    let g = generate_scene(3, 16, 16, SceneStyle::Rooms, 0.8).unwrap();
    let free = g.free_cells();
    let f = DistanceField::new(&g, free[0]).unwrap();
    for &c in &free {
        let (x, y) = g.center(c);
        assert_eq!(f.pose(&g, x, y), f.cell(c));
    }
}

#[test]
fn episodes_respect_separation_and_categories() {
    let open = SceneGrid::open(8, 8, 0.8);
    let ep = generate_episode(&open, 1, 1, 8, 0.8, 100).unwrap();
    let start = open.free_cell_of(ep.start.x, ep.start.y).unwrap();
    assert_ne!(ep.goals[0].cell, start);

    let g = generate_scene(9, 32, 32, SceneStyle::Rooms, 0.8).unwrap();
    for seed in 0..50 {
        let ep = generate_episode(&g, seed, 3, 8, 3.2, 500).unwrap();
        let mut cats: Vec<u8> = ep.goals.iter().map(|g| g.category).collect();
        cats.sort_unstable();
        cats.dedup();
        assert_eq!(cats.len(), 3);
        assert!(ep.goals.iter().all(|goal| g.is_free(goal.cell) && goal.category < 8));
        let mut cells = vec![g.free_cell_of(ep.start.x, ep.start.y).unwrap()];
        cells.extend(ep.goals.iter().map(|g| g.cell));
        for i in 0..cells.len() {
            let f = DistanceField::new(&g, cells[i]).unwrap();
            for &c in &cells[i + 1..] {
                assert!(f.cell(c) >= 3.2);
            }
        }
    }
}

#[test]
fn infeasible_episode_is_reported() {
    let g = SceneGrid::open(8, 8, 0.8);
    assert!(matches!(generate_episode(&g, 0, 3, 8, 50.0, 100), Err(Error::Infeasible(_))));
}

#[test]
fn turn_left_costs_only_time() {
    let g = SceneGrid::open(10, 10, 0.8);
    let spec = single_goal(&g, centered(&g, 2, 2, 0), (7, 7), 50);
    let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
    let r = sim.step(Action::TurnLeft).unwrap();
    assert_eq!(sim.pose().theta, 30);
    assert_eq!(r.reward, -0.01);
    assert!(!r.done);
    sim.step(Action::TurnRight).unwrap();
    sim.step(Action::TurnRight).unwrap();
    assert_eq!(sim.pose().theta, 330);
}

#[test]
fn forward_into_wall_collides() {
    let g = SceneGrid::open(10, 10, 0.8);
    // facing north from the top free row, the wall is 0.4 ahead
    let start = centered(&g, 4, 8, 0);
    let spec = single_goal(&g, start, (1, 1), 50);
    let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
    assert!(!sim.step(Action::Forward).unwrap().info.collision);
    assert_eq!(sim.pose().y, start.y + 0.25);
    let before = sim.pose();
    let r = sim.step(Action::Forward).unwrap();
    assert!(r.info.collision);
    assert_eq!(sim.pose(), before);
    assert_eq!(r.reward, -0.01);
}

#[test]
fn found_near_last_goal_succeeds() {
    let g = SceneGrid::open(10, 10, 0.8);
    let spec = single_goal(&g, centered(&g, 4, 4, 0), (5, 4), 50);
    let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
    let r = sim.step(Action::Found).unwrap();
    assert!((r.reward - (3.0 - 0.01)).abs() < 1e-15);
    assert!(r.done && r.info.subgoal_found);
    assert_eq!(sim.metrics().unwrap().success, 1.0);
    assert!(matches!(sim.step(Action::Forward), Err(Error::Contract(_))));
}

#[test]
fn found_far_from_goal_fails() {
    let g = SceneGrid::open(10, 10, 0.8);
    let spec = single_goal(&g, centered(&g, 1, 1, 0), (8, 8), 50);
    let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
    let r = sim.step(Action::Found).unwrap();
    assert!(r.done && !r.info.subgoal_found);
    assert_eq!(r.reward, -0.01);
    assert_eq!(sim.metrics().unwrap().progress, 0.0);
}

#[test]
fn budget_ends_episode() {
    let g = SceneGrid::open(10, 10, 0.8);
    let spec = single_goal(&g, centered(&g, 1, 1, 0), (8, 8), 3);
    let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
    assert!(!sim.step(Action::TurnLeft).unwrap().done);
    assert!(!sim.step(Action::TurnLeft).unwrap().done);
    assert!(sim.step(Action::TurnLeft).unwrap().done);
}

#[test]
fn oracle_view_axis_aligned_and_border() {
    let mut g = SceneGrid::open(12, 12, 0.8);
    let i = g.index(5, 7);
    g.objects[i] = Some(2);
    let v = oracle_view(&g, &centered(&g, 5, 5, 0), 5).unwrap();
    // centre is the navigator cell; two rows up is (5,7)
    assert_eq!(v.occupancy[12], Occupancy::Free.code());
    assert_eq!(v.objects[2], 3);
    let near = oracle_view(&g, &centered(&g, 1, 1, 0), 5).unwrap();
    // bottom row and left column fall outside the free interior
    for j in 0..5 {
        assert_eq!(near.occupancy[4 * 5 + j], Occupancy::OutOfBounds.code());
        assert_eq!(near.occupancy[j * 5], Occupancy::OutOfBounds.code());
    }
    assert!(matches!(oracle_view(&g, &centered(&g, 5, 5, 0), 4), Err(Error::Parameter(_))));
}

#[test]
fn oracle_view_rotation_by_quarter_turn() {
    let g = generate_scene(4, 16, 16, SceneStyle::Rooms, 0.8).unwrap();
    let p = centered(&g, 7, 7, 0);
    let a = oracle_view(&g, &p, 7).unwrap();
    let b = oracle_view(&g, &p.turned(90), 7).unwrap();
    // turning left by 90° rotates the view clockwise
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(b.occupancy[i * 7 + j], a.occupancy[(6 - j) * 7 + i]);
        }
    }
}

#[test]
fn full_nav_view_matches_oracle_window() {
    let g = SceneGrid::open(20, 20, 0.8);
    for theta in (0..360).step_by(30) {
        let p = centered(&g, 10, 10, theta);
        let nav = nav_view(&g, &p, 5, 360.0, f64::INFINITY).unwrap();
        let ora = oracle_view(&g, &p, 9).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                // nav row i sits at forward offset 4-i, oracle row 4-(4-i)=i
                assert_eq!(nav.occupancy[i * 5 + j], ora.occupancy[i * 9 + j + 2]);
            }
        }
    }
}

#[test]
fn goal_behind_agent_is_invisible() {
    let mut g = SceneGrid::open(12, 12, 0.8);
    let i = g.index(5, 3);
    g.objects[i] = Some(0);
    let p = centered(&g, 5, 5, 0);
    let v = nav_view(&g, &p, 9, 90.0, 4.0).unwrap();
    assert!(!v.has_object(1));
    let v = nav_view(&g, &p.turned(180), 9, 90.0, 4.0).unwrap();
    assert!(v.has_object(1));
}

#[test]
fn wall_hides_goal() {
    let g = SceneGrid::from_rows(
        &["XXXXXXX", "X..0..X", "X.....X", "X.###.X", "X.....X", "XXXXXXX"],
        0.8,
    )
    .unwrap();
    let p = centered(&g, 3, 1, 0);
    let v = nav_view(&g, &p, 7, 360.0, 100.0).unwrap();
    assert!(!v.has_object(1));
    let open = SceneGrid::from_rows(
        &["XXXXXXX", "X..0..X", "X.....X", "X.....X", "X.....X", "XXXXXXX"],
        0.8,
    )
    .unwrap();
    assert!(nav_view(&open, &p, 7, 360.0, 100.0).unwrap().has_object(1));
}

#[test]
fn nav_view_mask_is_symmetric() {
    let g = SceneGrid::open(30, 30, 0.8);
    for theta in (0..360).step_by(30) {
        let v = nav_view(&g, &centered(&g, 15, 15, theta), 9, 90.0, 4.0).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let masked = v.occupancy[i * 9 + j] == Occupancy::OutOfBounds.code();
                let mirror = v.occupancy[i * 9 + 8 - j] == Occupancy::OutOfBounds.code();
                assert_eq!(masked, mirror, "theta {theta} at ({i},{j})");
            }
        }
    }
}

#[test]
fn one_hot_planes_are_exact() {
    let g = generate_scene(2, 16, 16, SceneStyle::Rooms, 0.8).unwrap();
    let v = nav_view(&g, &centered(&g, 5, 5, 60), 9, 90.0, 4.0).unwrap();
    let planes = v.one_hot(8);
    let hw = 81;
    for i in 0..hw {
        let occ: f64 = (0..3).map(|c| planes[c * hw + i]).sum();
        let obj: f64 = (3..12).map(|c| planes[c * hw + i]).sum();
        assert_eq!((occ, obj), (1.0, 1.0));
    }
}

#[test]
fn ray_cells_steps_diagonally_through_vertices() {
    assert_eq!(ray_cells((0, 0), (2, 2)), vec![(0, 0), (1, 1), (2, 2)]);
    assert_eq!(ray_cells((0, 0), (3, 0)), vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
    let r = ray_cells((0, 0), (3, 1));
    assert_eq!(r.first(), Some(&(0, 0)));
    assert_eq!(r.last(), Some(&(3, 1)));
}

#[test]
fn optimal_run_has_unit_spl() {
    let g = SceneGrid::open(10, 10, 0.8);
    let start = centered(&g, 2, 4, 270);
    let spec = single_goal(&g, start, (6, 4), 100);
    // heading 270 faces east; walk exactly to the goal centre
    let traj = Trajectory { positions: vec![(start.x, start.y), (start.x + 3.2, start.y)], found: 1 };
    let m = compute_metrics(&g, &spec, &traj).unwrap();
    assert_eq!((m.success, m.progress), (1.0, 1.0));
    assert!((m.spl - 1.0).abs() < 1e-12 && (m.ppl - 1.0).abs() < 1e-12);
    let detour = Trajectory {
        positions: vec![(start.x, start.y), (start.x + 3.2, start.y), (start.x, start.y), (start.x + 3.2, start.y)],
        found: 1,
    };
    let m = compute_metrics(&g, &spec, &detour).unwrap();
    assert!((m.spl - 1.0 / 3.0).abs() < 1e-12);
    let twice = Trajectory { positions: vec![(start.x, start.y), (start.x + 6.4, start.y)], found: 1 };
    assert!((compute_metrics(&g, &spec, &twice).unwrap().spl - 0.5).abs() < 1e-12);
    let empty = Trajectory { positions: vec![(start.x, start.y)], found: 0 };
    assert!(matches!(compute_metrics(&g, &spec, &empty), Err(Error::Contract(_))));
}

#[test]
fn dataset_round_trip() {
    let mut c = cfg();
    c.width = 12;
    c.height = 12;
    c.goals = 2;
    let d = Dataset::generate(&c, 7, "train", 3, 2).unwrap();
    let json = d.to_json().unwrap();
    let back = Dataset::from_json(&json).unwrap();
    assert_eq!(back, d);
    let loaded = back.materialize().unwrap();
    assert_eq!(loaded.scenes.len(), 3);
    assert_eq!(loaded.episodes.len(), 6);
    assert_eq!(loaded.scenes[1].id, "train_1");
    assert_eq!(Dataset::generate(&c, 7, "train", 3, 2).unwrap().to_json().unwrap(), json);
    assert_ne!(Dataset::generate(&c, 7, "val", 3, 2).unwrap().to_json().unwrap(), json);
    let broken = json.replacen("\"train_0\"", "\"nowhere\"", 1);
    assert!(matches!(Dataset::from_json(&broken).unwrap().materialize(), Err(Error::Data(_))));
}

fn action_strategy() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(prop_oneof![6 => Just(0usize), 2 => Just(1usize), 2 => Just(2usize), 1 => Just(3usize)], 1..150)
}

fn run(scene_seed: u64, ep_seed: u64, actions: &[usize]) -> (Vec<StepResult>, NavSim) {
    let g = generate_scene(scene_seed, 12, 12, SceneStyle::Rooms, 0.8).unwrap();
    let spec = generate_episode(&g, ep_seed, 2, 8, 1.6, 500).unwrap();
    let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
    let mut out = Vec::new();
    for &a in actions {
        if sim.done() {
            break;
        }
        out.push(sim.step(Action::from_index(a).unwrap()).unwrap());
    }
    (out, sim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pose_stays_on_free_cells(scene_seed in 0u64..50, ep_seed in 0u64..50, actions in action_strategy()) {
        let g = generate_scene(scene_seed, 12, 12, SceneStyle::Rooms, 0.8).unwrap();
        let spec = generate_episode(&g, ep_seed, 2, 8, 1.6, 500).unwrap();
        let mut sim = NavSim::new(&g, spec, &cfg()).unwrap();
        for a in actions {
            if sim.done() { break; }
            let before = sim.goals_found();
            let r = sim.step(Action::from_index(a).unwrap()).unwrap();
            let p = sim.pose();
            prop_assert!(g.free_cell_of(p.x, p.y).is_some());
            if a == 3 {
                prop_assert!(r.info.subgoal_found == (sim.goals_found() == before + 1));
                prop_assert!(r.info.subgoal_found || r.done);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_steps(scene_seed in 0u64..50, ep_seed in 0u64..50, actions in action_strategy()) {
        let (a, _) = run(scene_seed, ep_seed, &actions);
        let (b, _) = run(scene_seed, ep_seed, &actions);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.reward.to_bits(), y.reward.to_bits());
            prop_assert_eq!(&x.obs, &y.obs);
            prop_assert_eq!(x.done, y.done);
        }
    }

    #[test]
    fn metrics_stay_in_bounds(scene_seed in 0u64..50, ep_seed in 0u64..50, actions in action_strategy()) {
        let (_, sim) = run(scene_seed, ep_seed, &actions);
        let m = sim.metrics().unwrap();
        prop_assert!(0.0 <= m.spl && m.spl <= m.success && m.success <= 1.0);
        prop_assert!(0.0 <= m.ppl && m.ppl <= m.progress && m.progress <= 1.0);
        prop_assert!(m.success < 1.0 || m.progress == 1.0);
    }
}
