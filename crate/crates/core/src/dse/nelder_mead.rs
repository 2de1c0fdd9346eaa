//! Derivative-free Nelder–Mead minimisation.

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    /// Edge length of the initial simplex.
    pub step: f64,
    /// Stop when the spread of objective values over the simplex drops below this.
    pub tolerance: f64,
    /// Budget of objective evaluations.
    pub max_evals: usize,
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimise `f` from `x0`. The budget counts every call of `f`, including
/// the initial simplex; on exhaustion the best vertex is returned.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)?));
    for i in 0..n {
        if evals >= opts.max_evals {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let v = eval(&x, &mut evals)?;
        simplex.push((x, v));
    }
    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    sort(&mut simplex);
    let mut converged = false;
    while simplex.len() == n + 1 && evals < opts.max_evals {
        if simplex[n].1 - simplex[0].1 < opts.tolerance {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + coef * (w - c)).collect()
        };
        let worst = simplex[n].0.clone();
        let reflected = toward(-1.0, &worst);
        let fr = eval(&reflected, &mut evals)?;
        if fr < simplex[0].1 {
            if evals < opts.max_evals {
                let expanded = toward(-2.0, &worst);
                let fe = eval(&expanded, &mut evals)?;
                simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else {
                simplex[n] = (reflected, fr);
            }
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else if evals < opts.max_evals {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = toward(-0.5, &worst);
                let v = eval(&c, &mut evals)?;
                (c, v)
            } else {
                let c = toward(0.5, &worst);
                let v = eval(&c, &mut evals)?;
                (c, v)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if evals >= opts.max_evals {
                        break;
                    }
                    let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&x, &mut evals)?;
                    *vertex = (x, v);
                }
            }
        }
        sort(&mut simplex);
    }
    let (x, value) = simplex.swap_remove(0);
    Ok(NelderMeadResult { x, value, evals, converged })
}
