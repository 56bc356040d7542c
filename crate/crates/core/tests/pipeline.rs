use cvsim::config::parse_config;
use cvsim::harness::{run_sweep, run_sweep_detailed, CSV_HEADER};

const BASE: &str =
    "dt = 1e-3\nn_samples = 500\neps_grid = [0.5, 0.25, 0.1]\ncontrol.n_ref = 10000\n";

fn config(extra: &str) -> cvsim::config::RunConfig {
    parse_config(&format!("{BASE}{extra}")).unwrap()
}

#[test]
fn worker_count_does_not_change_the_csv() {
    for kind in ["friction", "reflected_integral", "van_der_pol"] {
        let one = run_sweep(&config(&format!("model.kind = \"{kind}\"\nworkers = 1\n")))
            .unwrap()
            .0;
        let three = run_sweep(&config(&format!("model.kind = \"{kind}\"\nworkers = 3\n")))
            .unwrap()
            .0;
        assert_eq!(one, three, "{kind}");
    }
}

#[test]
fn csv_numbers_round_trip_exactly() {
    let out = run_sweep_detailed(&config("model.kind = \"elasto_plastic\"\n")).unwrap();
    let mut lines = out.csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some(CSV_HEADER));
    for (line, p) in lines.zip(&out.points) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let r = p.row;
        assert_eq!(
            v,
            vec![
                r.eps,
                r.nvar_over_eps,
                r.nvar_over_eps2,
                r.i_hat,
                r.j_hat,
                r.efu
            ]
        );
    }
}

#[test]
fn seed_changes_the_numbers() {
    let a = run_sweep(&config("seed = 1\n")).unwrap().0;
    let b = run_sweep(&config("seed = 2\n")).unwrap().0;
    assert_ne!(a, b);
}

#[test]
fn manifest_reproduces_the_run() {
    let (csv, manifest) = run_sweep(&config("model.kind = \"impact\"\n")).unwrap();
    let json = serde_json::to_string(&manifest).unwrap();
    let back: cvsim::harness::RunManifest = serde_json::from_str(&json).unwrap();
    assert_eq!(run_sweep(&back.config).unwrap().0, csv);
}

#[test]
fn shared_increments_shrink_the_variance_with_eps() {
    let mut cfg = config("");
    cfg.dt = 1e-4;
    let out = run_sweep_detailed(&cfg).unwrap();
    let v: Vec<f64> = out
        .points
        .iter()
        .map(|p| p.control.normalized_variance)
        .collect();
    assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
    let last = &out.points[2];
    assert!(last.control.normalized_variance < 0.2 * last.brute.normalized_variance);
}
