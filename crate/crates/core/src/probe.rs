//! Linear probes from recorded LSTM states to the timestep, and the shape
//! statistics of individual counting neurons.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::{label_index, Example};
use crate::error::{Error, Result};
use crate::model::{self, LstmParams};
use crate::numkit::{gemm, Matrix, Op};

/// Diagonal damping added to the centered normal equations.
pub const RIDGE: f64 = 1e-8;

/// Default number of test examples fed to the probes.
pub const DEFAULT_PROBE_EXAMPLES: usize = 100;

/// Correctly classified examples averaged over for the counting-shape summary.
pub const SHAPE_EXAMPLES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    /// Hidden output `h_t`.
    H,
    /// Cell state `c_t`.
    C,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKind::H => "h",
            StateKind::C => "c",
        })
    }
}

impl std::str::FromStr for StateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(StateKind::H),
            "c" => Ok(StateKind::C),
            other => Err(Error::Config(format!("state kind must be h or c, got {other:?}"))),
        }
    }
}

/// One row per (example, timestep): the states after `t` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTable {
    pub n: usize,
    pub example_ids: Vec<usize>,
    /// 1-based count of inputs seen.
    pub t: Vec<usize>,
    pub h: Matrix,
    pub c: Matrix,
}

impl StateTable {
    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn hidden(&self) -> usize {
        self.h.cols()
    }

    pub fn states(&self, which: StateKind) -> &Matrix {
        match which {
            StateKind::H => &self.h,
            StateKind::C => &self.c,
        }
    }

    pub fn targets(&self) -> Vec<f64> {
        self.t.iter().map(|&t| t as f64).collect()
    }

    /// One column of `h` or `c`.
    pub fn column(&self, which: StateKind, neuron: usize) -> Vec<f64> {
        let m = self.states(which);
        (0..m.rows()).map(|r| m.get(r, neuron)).collect()
    }
}

/// Record `h_t` and `c_t` for the first `limit` examples.
pub fn collect_states(params: &LstmParams, examples: &[Example], limit: usize) -> Result<StateTable> {
    let used = &examples[..limit.min(examples.len())];
    if used.is_empty() {
        return Err(Error::Data("no examples to probe".into()));
    }
    let n = used[0].len();
    let d = params.hidden();
    let mut h = Vec::with_capacity(used.len() * n * d);
    let mut c = Vec::with_capacity(used.len() * n * d);
    let mut example_ids = Vec::with_capacity(used.len() * n);
    let mut t = Vec::with_capacity(used.len() * n);
    for (id, ex) in used.iter().enumerate() {
        if ex.len() != n {
            return Err(Error::Data(format!("example {id} has length {} but the first has {n}", ex.len())));
        }
        for (step, state) in model::record_states(params, &ex.tokens)?.into_iter().enumerate() {
            h.extend_from_slice(&state.h);
            c.extend_from_slice(&state.c);
            example_ids.push(id);
            t.push(step + 1);
        }
    }
    let rows = t.len();
    Ok(StateTable {
        n,
        example_ids,
        t,
        h: Matrix::from_vec(rows, d, h)?,
        c: Matrix::from_vec(rows, d, c)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
}

/// `R² = 1 − SS_res / SS_tot`, clamped to `[0, 1]`; a constant target gives 0.
pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f).powi(2)).sum();
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// In-place Cholesky solve of `A x = b` for symmetric positive definite `A`.
fn cholesky_solve(a: &mut Matrix, b: &mut [f64]) -> Result<()> {
    let p = a.rows();
    for j in 0..p {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= a.get(j, k).powi(2);
        }
        if !(diag > 0.0) {
            return Err(Error::Numeric(format!("normal equations not positive definite at column {j}")));
        }
        let l_jj = diag.sqrt();
        a.set(j, j, l_jj);
        for i in j + 1..p {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= a.get(i, k) * a.get(j, k);
            }
            a.set(i, j, v / l_jj);
        }
    }
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= a.get(i, k) * b[k];
        }
        b[i] = v / a.get(i, i);
    }
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in i + 1..p {
            v -= a.get(k, i) * b[k];
        }
        b[i] = v / a.get(i, i);
    }
    Ok(())
}

/// Least squares with intercept: solve the centered normal equations with
/// [`RIDGE`] on the diagonal.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<OlsFit> {
    let (rows, p) = x.shape();
    if rows == 0 || p == 0 {
        return Err(Error::Data("ols_fit: empty design matrix".into()));
    }
    if y.len() != rows {
        return Err(Error::Shape(format!("ols_fit: {rows} design rows but {} targets", y.len())));
    }
    if rows < p + 1 {
        return Err(Error::Data(format!("ols_fit: {rows} rows cannot fit {p} columns plus intercept")));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ols_fit: non-finite input".into()));
    }
    let mut means = vec![0.0; p];
    for r in 0..rows {
        for (m, v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= rows as f64);
    let y_mean = y.iter().sum::<f64>() / rows as f64;

    let xc = Matrix::from_fn(rows, p, |r, j| x.get(r, j) - means[j]);
    let yc = Matrix::from_vec(rows, 1, y.iter().map(|v| v - y_mean).collect())?;
    let mut gram = Matrix::zeros(p, p);
    gemm(1.0, &xc, Op::T, &xc, Op::N, 0.0, &mut gram);
    for j in 0..p {
        gram.set(j, j, gram.get(j, j) + RIDGE);
    }
    let mut xty = Matrix::zeros(p, 1);
    gemm(1.0, &xc, Op::T, &yc, Op::N, 0.0, &mut xty);
    let mut beta = xty.into_vec();
    cholesky_solve(&mut gram, &mut beta)?;

    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let fitted = x.matvec(&beta)?;
    let fitted: Vec<f64> = fitted.into_iter().map(|v| v + intercept).collect();
    Ok(OlsFit {
        r2: r_squared(y, &fitted),
        coefficients: beta,
        intercept,
    })
}

/// R² of predicting `t` from all `d` columns of one state kind.
pub fn full_state_r2(table: &StateTable, which: StateKind) -> Result<f64> {
    Ok(ols_fit(table.states(which), &table.targets())?.r2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronR2 {
    pub neuron: usize,
    pub r2_c: f64,
    pub r2_h: f64,
}

/// Single-feature R² for every neuron, ranked by `r2_c` descending (ties to
/// the lower index).
pub fn per_neuron_r2(table: &StateTable) -> Result<Vec<NeuronR2>> {
    let y = table.targets();
    let rows = table.rows();
    let fit = |which, j| -> Result<f64> {
        let col = Matrix::from_vec(rows, 1, table.column(which, j))?;
        Ok(ols_fit(&col, &y)?.r2)
    };
    let mut out = (0..table.hidden())
        .map(|j| {
            Ok(NeuronR2 {
                neuron: j,
                r2_c: fit(StateKind::C, j)?,
                r2_h: fit(StateKind::H, j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.r2_c.total_cmp(&a.r2_c).then(a.neuron.cmp(&b.neuron)));
    Ok(out)
}

/// Activation of one unit after each input, as `(t, value)` with `t` 1-based.
pub fn trace_neuron(
    params: &LstmParams,
    example: &Example,
    neuron: usize,
    which: StateKind,
) -> Result<Vec<(usize, f64)>> {
    if neuron >= params.hidden() {
        return Err(Error::Config(format!(
            "neuron {neuron} out of range for hidden size {}",
            params.hidden()
        )));
    }
    Ok(model::record_states(params, &example.tokens)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let v = match which {
                StateKind::H => s.h[neuron],
                StateKind::C => s.c[neuron],
            };
            (i + 1, v)
        })
        .collect())
}

/// `t,activation`
pub fn trace_csv(trace: &[(usize, f64)]) -> String {
    let mut out = String::from("t,activation\n");
    for (t, v) in trace {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingShape {
    /// Pearson correlation of activation with `t` over `t ≤ target`.
    pub pre_corr: f64,
    /// Mean `|activation|` after the target over `|activation|` at it.
    pub post_mag_ratio: f64,
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Shape of a trace around the 1-based `target` timestep. A constant pre-target
/// segment has correlation 0.
pub fn counting_shape_stats(trace: &[f64], target: usize) -> Result<CountingShape> {
    if target < 2 || target >= trace.len() {
        return Err(Error::Config(format!(
            "target {target} needs at least two steps before and one after in a trace of length {}",
            trace.len()
        )));
    }
    let ts: Vec<f64> = (1..=target).map(|t| t as f64).collect();
    let pre_corr = pearson(&ts, &trace[..target]);
    let at = trace[target - 1].abs();
    let post = &trace[target..];
    let post_mean = post.iter().map(|v| v.abs()).sum::<f64>() / post.len() as f64;
    let post_mag_ratio = if at > 0.0 {
        post_mean / at
    } else if post_mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CountingShape { pre_corr, post_mag_ratio })
}

/// Counting-shape statistics of one neuron averaged over correctly
/// classified examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub neuron: usize,
    pub which: StateKind,
    pub examples: usize,
    pub mean_abs_pre_corr: f64,
    pub mean_post_mag_ratio: f64,
}

pub fn shape_summary(
    params: &LstmParams,
    examples: &[Example],
    neuron: usize,
    which: StateKind,
    max_examples: usize,
) -> Result<ShapeSummary> {
    let mut used = 0;
    let (mut corr, mut ratio) = (0.0, 0.0);
    for ex in examples {
        if used == max_examples {
            break;
        }
        if model::predict(params, &ex.tokens)? != ex.label {
            continue;
        }
        let trace: Vec<f64> = trace_neuron(params, ex, neuron, which)?.into_iter().map(|(_, v)| v).collect();
        let s = counting_shape_stats(&trace, label_index(ex.len())? + 1)?;
        corr += s.pre_corr.abs();
        ratio += s.post_mag_ratio;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Data("no correctly classified examples to summarize".into()));
    }
    Ok(ShapeSummary {
        neuron,
        which,
        examples: used,
        mean_abs_pre_corr: corr / used as f64,
        mean_post_mag_ratio: ratio / used as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n: usize,
    pub hidden: usize,
    pub examples: usize,
    pub full_state_r2_c: f64,
    pub full_state_r2_h: f64,
    pub per_neuron: Vec<NeuronR2>,
    /// Cell-state shape statistics of the top-ranked neurons; empty when the
    /// model classifies none of the examples correctly.
    pub top_shapes: Vec<ShapeSummary>,
}

impl ProbeReport {
    pub fn top_neuron(&self) -> &NeuronR2 {
        &self.per_neuron[0]
    }
}

/// Full probe over up to `limit` examples; shape summaries for the `top` best
/// cell-state neurons.
pub fn probe(params: &LstmParams, examples: &[Example], limit: usize, top: usize) -> Result<ProbeReport> {
    let table = collect_states(params, examples, limit)?;
    let per_neuron = per_neuron_r2(&table)?;
    let n = table.n;
    let top_shapes = if n >= 3 {
        per_neuron
            .iter()
            .take(top)
            .map(|r| shape_summary(params, examples, r.neuron, StateKind::C, SHAPE_EXAMPLES))
            .collect::<Result<Vec<_>>>()
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(ProbeReport {
        n,
        hidden: table.hidden(),
        examples: table.rows() / n,
        full_state_r2_c: full_state_r2(&table, StateKind::C)?,
        full_state_r2_h: full_state_r2(&table, StateKind::H)?,
        per_neuron,
        top_shapes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::numkit::RandomStream;
    use std::str::FromStr;

    #[test]
    fn exact_line() {
        let x = Matrix::from_vec(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y: Vec<f64> = (0..5).map(|v| 2.0 * v as f64 + 1.0).collect();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-7);
        assert!((fit.intercept - 1.0).abs() < 1e-7);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_has_zero_r2() {
        let x = Matrix::from_fn(6, 2, |r, c| (r * (c + 1)) as f64);
        assert_eq!(ols_fit(&x, &[3.0; 6]).unwrap().r2, 0.0);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(ols_fit(&Matrix::zeros(0, 1), &[]).is_err());
        assert!(ols_fit(&Matrix::zeros(2, 2), &[1.0, 2.0]).is_err());
        assert!(ols_fit(&Matrix::zeros(3, 1), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_column_is_harmless() {
        let x = Matrix::from_fn(10, 2, |r, c| if c == 0 { r as f64 } else { 5.0 });
        let y: Vec<f64> = (0..10).map(|r| 3.0 * r as f64).collect();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-9);
        assert!(fit.coefficients[1].abs() < 1e-6);
    }

    #[test]
    fn shape_of_ideal_counter() {
        let trace: Vec<f64> = (1..=10).map(|t| if t <= 6 { t as f64 } else { 0.0 }).collect();
        let s = counting_shape_stats(&trace, 6).unwrap();
        assert!((s.pre_corr - 1.0).abs() < 1e-12);
        assert_eq!(s.post_mag_ratio, 0.0);
        let s = counting_shape_stats(&[0.3; 10], 6).unwrap();
        assert_eq!(s.pre_corr, 0.0);
        assert!((s.post_mag_ratio - 1.0).abs() < 1e-12);
        assert!(counting_shape_stats(&trace, 10).is_err());
        assert!(counting_shape_stats(&trace, 1).is_err());
    }

    #[test]
    fn table_shapes_and_traces_agree() {
        let p = init_model(&ModelConfig::new(30, 6, 3)).unwrap();
        let mut rng = RandomStream::new(1, "t");
        let exs = crate::datagen::gen_uniform(30, 9, 4, &mut rng).unwrap();
        let table = collect_states(&p, &exs, 10).unwrap();
        assert_eq!(table.rows(), 36);
        assert!(table.h.data().iter().all(|v| v.abs() < 1.0));
        let tr = trace_neuron(&p, &exs[2], 4, StateKind::C).unwrap();
        assert_eq!(tr.len(), 9);
        for (k, (t, v)) in tr.iter().enumerate() {
            assert_eq!(*t, k + 1);
            assert_eq!(*v, table.c.get(18 + k, 4));
        }
        assert!(trace_neuron(&p, &exs[0], 6, StateKind::H).is_err());
        assert_eq!(StateKind::from_str("c").unwrap(), StateKind::C);
    }
}
