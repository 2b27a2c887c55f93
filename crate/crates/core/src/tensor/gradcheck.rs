use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Fourth-order central difference from values at x±h and x±2h.
fn stencil(at: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (up, down, up2, down2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
    Ok((8.0 * (up - down) - (up2 - down2)) / (12.0 * h))
}

/// Derivative estimate with the step chosen from 100h, 10h and h. Each of
/// the two larger steps is scored by its disagreement with the next smaller
/// one and the better scored estimate wins. Large steps lose where a kink is
/// close, small ones where rounding dominates a tiny derivative. The choice
/// never looks at the analytic gradient.
fn derivative(mut at: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let d: Vec<f64> = [100.0 * h, 10.0 * h, h].iter().map(|&s| stencil(&mut at, s)).collect::<Result<_>>()?;
    Ok(if (d[0] - d[1]).abs() < (d[1] - d[2]).abs() { d[0] } else { d[1] })
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares the reverse-mode gradient of `f` at `x` with fourth-order central
/// differences, stepping by at most `100h`. Returns the largest per-coordinate relative error
/// `|a − fd| / (|a| + |fd| + 1e−12)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    let leaf = x.clone().with_requires_grad(true);
    let mut g = Graph::new();
    let xv = g.input(&leaf);
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads.wrt(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::no_grad();
        let v = g.input(t);
        let o = f(&mut g, v)?;
        Ok(g.scalar(o))
    };
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let fd = derivative(
            |d| {
                probe.data_mut()[i] = orig + d;
                eval(&probe)
            },
            h,
        )?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic[i], fd));
    }
    Ok(worst)
}

/// Finite-difference check of parameter gradients. `f` builds a scalar from
/// the store. For each parameter the `coords_per_param` coordinates with the
/// largest analytic gradient are probed: where a gradient nearly vanishes the
/// central difference is dominated by rounding and the relative error says
/// nothing about the backward pass.
pub fn param_fd_check<F>(store: &ParamStore, f: F, h: f64, coords_per_param: usize) -> Result<f64>
where
    F: for<'p> Fn(&mut Graph<'p>, &'p ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (id, gr) in grads.param_grads() {
        analytic[id.0] = Some(gr.to_vec());
    }
    drop(g);

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for p in 0..store.len() {
        let id = ParamId(p);
        let n = store.get(id).len();
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(a) = &analytic[p] {
            order.sort_by(|&i, &j| a[j].abs().total_cmp(&a[i].abs()).then(i.cmp(&j)));
        }
        for &i in order.iter().take(coords_per_param.max(1)) {
            let orig = store.get(id).data()[i];
            let fd = derivative(
                |d| {
                    probe.get_mut(id).data_mut()[i] = orig + d;
                    eval_store(&probe, &f)
                },
                h,
            )?;
            probe.get_mut(id).data_mut()[i] = orig;
            let a = analytic[p].as_ref().map_or(0.0, |v| v[i]);
            worst = worst.max(rel_err(a, fd));
        }
    }
    Ok(worst)
}

fn eval_store<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: for<'p> Fn(&mut Graph<'p>, &'p ParamStore) -> Result<Var>,
{
    let mut g = Graph::no_grad();
    let o = f(&mut g, store)?;
    Ok(g.scalar(o))
}
