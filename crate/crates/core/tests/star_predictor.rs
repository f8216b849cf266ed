use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use gcstar::likelihood::Likelihood;
use gcstar::priors::AlphaPrior;
use gcstar::star_predictor::{
    joint_prior_logdensity, make_iid, make_icar, make_linear, make_rw2, Graph, LatentModel, PredictorComponent,
};

fn dense(c: &PredictorComponent) -> DMatrix<f64> {
    let k = c.penalty_dense();
    let d = k.len();
    DMatrix::from_fn(d, d, |i, j| k[i][j])
}

fn null_space(k: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = k.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let cols: Vec<DVector<f64>> = (0..k.nrows())
        .filter(|&i| eig.eigenvalues[i] < 1e-8 * max)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let basis = if cols.is_empty() {
        DMatrix::zeros(k.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (eig.eigenvalues.iter().copied().collect(), basis)
}

fn check_structure(c: &PredictorComponent) {
    let k = dense(c);
    assert!((&k - k.transpose()).abs().max() < 1e-14, "{} not symmetric", c.name);
    let (eigs, null) = null_space(&k);
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min >= -1e-10, "{}: min eigenvalue {min}", c.name);
    assert_eq!(null.ncols(), c.rank_deficiency, "{}: rank deficiency", c.name);
    if c.is_random() && !c.constraints.is_empty() {
        // Constraint rows span the null space: projecting the null basis on
        // the orthogonal complement of the constraint rows leaves nothing.
        let a = DMatrix::from_fn(c.constraints.len(), c.dim(), |r, j| c.constraints[r][j]);
        let ata = &a * a.transpose();
        let proj = a.transpose() * ata.try_inverse().unwrap() * &a;
        let resid = &null - &proj * &null;
        assert!(resid.abs().max() < 1e-8, "{}: constraints miss the null space", c.name);
    }
}

fn grid_graph(w: usize, h: usize) -> Graph {
    let mut nb = vec![Vec::new(); w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                nb[i].push(i + 1);
                nb[i + 1].push(i);
            }
            if r + 1 < h {
                nb[i].push(i + w);
                nb[i + w].push(i);
            }
        }
    }
    Graph::new(nb).unwrap()
}

#[test]
fn every_constructor_satisfies_structure_invariants() {
    let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    check_structure(&make_rw2("s", &x, 30).unwrap());
    check_structure(&make_rw2("s", &x, 7).unwrap());
    let g = grid_graph(4, 3);
    let regions: Vec<usize> = (0..24).map(|i| i % 12 + 1).collect();
    check_structure(&make_icar("sp", &g, &regions).unwrap());
    let split = Graph::parse("5\n1 1 2\n2 1 1\n3 1 4\n4 2 3 5\n5 1 4\n").unwrap();
    let icar = make_icar("sp", &split, &[1, 2, 3, 4, 5]).unwrap();
    assert_eq!(icar.rank_deficiency, 2);
    check_structure(&icar);
    let groups: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
    let iid = make_iid("g", &groups).unwrap();
    assert_eq!(iid.rank_deficiency, 0);
    check_structure(&iid);
}

#[test]
fn icar_path_graph_and_row_sums() {
    let g = Graph::parse("3\n1 1 2\n2 2 1 3\n3 1 2\n").unwrap();
    let c = make_icar("s", &g, &[1, 2, 3]).unwrap();
    let k = c.penalty_dense();
    assert_eq!(k, vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]);
    assert_eq!(c.rank(), 2);
    let gg = grid_graph(5, 4);
    let c = make_icar("s", &gg, &(1..=20).collect::<Vec<_>>()).unwrap();
    for row in c.penalty_dense() {
        assert!(row.iter().sum::<f64>().abs() < 1e-14);
    }
}

#[test]
fn rw2_quadratic_form_matches_second_differences() {
    let m = 12;
    let x: Vec<f64> = (0..m).map(|i| i as f64).collect();
    let c = make_rw2("s", &x, m).unwrap();
    let beta: Vec<f64> = (0..m).map(|k| (k * k) as f64).collect();
    let direct: f64 = (0..m - 2).map(|k| (beta[k + 2] - 2.0 * beta[k + 1] + beta[k]).powi(2)).sum();
    assert_eq!(direct, 4.0 * (m - 2) as f64);
    assert!((c.quad_form(&beta) - direct).abs() < 1e-9);
}

#[test]
fn iid_design_has_one_entry_per_row() {
    let groups: Vec<String> = ["x", "y", "z", "y", "x"].iter().map(|s| s.to_string()).collect();
    let c = make_iid("g", &groups).unwrap();
    assert_eq!(c.penalty_dense(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    for row in c.design.to_dense() {
        assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }
    assert!(make_iid("g", &["only".to_string(), "only".to_string()]).is_err());
}

#[test]
fn graph_errors_and_round_trip() {
    assert!(Graph::parse("2\n1 1 1\n2 0\n").is_err(), "self loop");
    assert!(Graph::parse("3\n1 1 2\n2 0\n3 0\n").is_err(), "asymmetric");
    let g = grid_graph(3, 3);
    assert_eq!(Graph::parse(&g.to_text()).unwrap(), g);
}

fn model_with(x: &[f64], regions: &[usize], g: &Graph) -> LatentModel {
    let comps = vec![
        make_linear("x", x).unwrap(),
        make_rw2("s", x, 10).unwrap(),
        make_icar("sp", g, regions).unwrap(),
    ];
    LatentModel::new(x.len(), comps, Likelihood::GammaCount, AlphaPrior::pc(3.0, 1.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prior_invariant_to_null_space_shifts(
        seed in prop::collection::vec(-2.0f64..2.0, 1 + 1 + 10 + 9),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        c in -5.0f64..5.0,
        lt1 in -2.0f64..3.0,
        lt2 in -2.0f64..3.0,
    ) {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let g = grid_graph(3, 3);
        let regions: Vec<usize> = (0..40).map(|i| i % 9 + 1).collect();
        let model = model_with(&x, &regions, &g);
        let taus = [lt1.exp(), lt2.exp()];
        let base = joint_prior_logdensity(&model, &seed, &taus).unwrap();
        let mut shifted = seed.clone();
        // RW2 null space: constants and linear trends in the bin index.
        for (k, v) in shifted[model.range(1)].iter_mut().enumerate() {
            *v += a + b * k as f64;
        }
        // ICAR null space: constant over the connected graph.
        for v in shifted[model.range(2)].iter_mut() {
            *v += c;
        }
        let moved = joint_prior_logdensity(&model, &shifted, &taus).unwrap();
        prop_assert!((base - moved).abs() < 1e-8 * (1.0 + base.abs()));
    }

    #[test]
    fn zero_latent_gives_rank_terms(lt1 in -3.0f64..4.0, lt2 in -3.0f64..4.0) {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let g = grid_graph(3, 3);
        let regions: Vec<usize> = (0..40).map(|i| i % 9 + 1).collect();
        let model = model_with(&x, &regions, &g);
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let v = joint_prior_logdensity(&model, &vec![0.0; model.dim()], &[lt1.exp(), lt2.exp()]).unwrap();
        let expected = 0.5 * (0.01f64.ln() - ln2pi)
            + 0.5 * (0.001f64.ln() - ln2pi)
            + 0.5 * 8.0 * (lt1 - ln2pi)
            + 0.5 * 8.0 * (lt2 - ln2pi);
        prop_assert!((v - expected).abs() < 1e-10);
    }
}
