use memlab::datagen::gen_uniform;
use memlab::model::{init_model, ModelConfig};
use memlab::numkit::{Matrix, RandomStream};
use memlab::probe::{self, collect_states, full_state_r2, ols_fit, per_neuron_r2, StateKind, StateTable};
use nalgebra::DMatrix;

fn random_matrix(rng: &mut RandomStream, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.next_f64() * 2.0 - 1.0)
}

/// Least squares with intercept through the SVD pseudo-inverse.
fn pinv_fit(x: &Matrix, y: &[f64]) -> (Vec<f64>, f64, f64) {
    let (rows, p) = x.shape();
    let a = DMatrix::from_fn(rows, p + 1, |r, c| if c == p { 1.0 } else { x.get(r, c) });
    let b = DMatrix::from_column_slice(rows, 1, y);
    let sol = a.clone().pseudo_inverse(1e-12).unwrap() * &b;
    let fitted = &a * &sol;
    let mean = y.iter().sum::<f64>() / rows as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    ((0..p).map(|i| sol[i]).collect(), sol[p], 1.0 - ss_res / ss_tot)
}

#[test]
fn ols_matches_pseudo_inverse() {
    let mut rng = RandomStream::new(11, "ols");
    for _ in 0..5 {
        let x = random_matrix(&mut rng, 50, 3);
        let y: Vec<f64> = (0..50)
            .map(|r| 1.5 * x.get(r, 0) - 0.7 * x.get(r, 2) + 0.3 + 0.5 * (rng.next_f64() - 0.5))
            .collect();
        let fit = ols_fit(&x, &y).unwrap();
        let (coef, intercept, r2) = pinv_fit(&x, &y);
        for (a, b) in fit.coefficients.iter().zip(&coef) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!((fit.intercept - intercept).abs() < 1e-8);
        assert!((fit.r2 - r2).abs() < 1e-8);
    }
}

#[test]
fn r2_invariant_under_affine_column_rescaling() {
    let mut rng = RandomStream::new(12, "affine");
    let x = random_matrix(&mut rng, 200, 4);
    let y: Vec<f64> = (0..200).map(|r| x.get(r, 1) + 0.2 * x.get(r, 3) + 0.1 * rng.next_f64()).collect();
    let base = ols_fit(&x, &y).unwrap().r2;
    let scaled = Matrix::from_fn(200, 4, |r, c| if c == 1 { 7.5 * x.get(r, c) - 3.0 } else { x.get(r, c) });
    assert!((ols_fit(&scaled, &y).unwrap().r2 - base).abs() < 1e-6);
}

fn table_from(c: Matrix, n: usize) -> StateTable {
    let rows = c.rows();
    StateTable {
        n,
        example_ids: (0..rows).map(|r| r / n).collect(),
        t: (0..rows).map(|r| r % n + 1).collect(),
        h: c.clone(),
        c,
    }
}

#[test]
fn synthetic_counter_neuron_is_found() {
    let mut rng = RandomStream::new(13, "counter");
    let n = 20;
    let mut c = random_matrix(&mut rng, 40 * n, 8);
    for r in 0..c.rows() {
        c.set(r, 5, (r % n + 1) as f64);
    }
    let table = table_from(c, n);
    assert!((full_state_r2(&table, StateKind::C).unwrap() - 1.0).abs() < 1e-9);
    let ranked = per_neuron_r2(&table).unwrap();
    assert_eq!(ranked[0].neuron, 5);
    assert!((ranked[0].r2_c - 1.0).abs() < 1e-9);
    assert!(ranked.windows(2).all(|w| w[0].r2_c >= w[1].r2_c));
}

#[test]
fn constant_neurons_have_zero_r2() {
    let table = table_from(Matrix::from_fn(100, 3, |_, c| c as f64 * 0.25), 10);
    assert!(per_neuron_r2(&table).unwrap().iter().all(|r| r.r2_c == 0.0 && r.r2_h == 0.0));
}

#[test]
fn null_states_explain_nothing() {
    let mut rng = RandomStream::new(14, "null");
    let table = table_from(random_matrix(&mut rng, 10_000, 100), 50);
    let r2 = full_state_r2(&table, StateKind::C).unwrap();
    assert!(r2 < 0.05, "R2 {r2}");
}

#[test]
fn full_state_dominates_best_neuron_and_probing_is_read_only() {
    let params = init_model(&ModelConfig::new(40, 10, 2)).unwrap();
    let before = (params.weights.clone(), params.embedding().checksum());
    let exs = gen_uniform(40, 12, 30, &mut RandomStream::new(2, "p")).unwrap();
    let table = collect_states(&params, &exs, 30).unwrap();
    assert_eq!(table.rows(), 30 * 12);
    assert_eq!(collect_states(&params, &exs, 30).unwrap(), table);
    let ranked = per_neuron_r2(&table).unwrap();
    assert_eq!(ranked.len(), 10);
    for which in [StateKind::C, StateKind::H] {
        let full = full_state_r2(&table, which).unwrap();
        let best = ranked
            .iter()
            .map(|r| if which == StateKind::C { r.r2_c } else { r.r2_h })
            .fold(0.0, f64::max);
        assert!(full >= best - 1e-6);
        assert!((0.0..=1.0).contains(&full));
    }
    let report = probe::probe(&params, &exs, 30, 2).unwrap();
    assert_eq!(report.per_neuron.len(), 10);
    assert_eq!(report, probe::probe(&params, &exs, 30, 2).unwrap());
    assert_eq!((params.weights.clone(), params.embedding().checksum()), before);
}

#[test]
fn carry_model_has_a_counting_cell() {
    // the hand-wired network counts in its last unit
    let n = 20;
    let params = memlab::model::middle_token_model(60, 6, n, 1).unwrap();
    let exs = gen_uniform(60, n, 40, &mut RandomStream::new(3, "carry")).unwrap();
    let report = probe::probe(&params, &exs, 40, 1).unwrap();
    assert_eq!(report.top_neuron().neuron, 5);
    assert!(report.top_neuron().r2_c > 0.99);
    assert!(report.full_state_r2_c > 0.99);
    let trace = probe::trace_neuron(&params, &exs[0], 5, StateKind::C).unwrap();
    assert_eq!(trace.len(), n);
    let csv = probe::trace_csv(&trace);
    assert!(csv.starts_with("t,activation\n"));
    assert_eq!(csv.lines().count(), n + 1);
}
