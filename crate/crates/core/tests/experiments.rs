use moe_lab_core::config::{Experiment, ExperimentConfig};
use moe_lab_core::experiments::{self, Cell};

fn small(exp: Experiment) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(exp);
    cfg.seeds = 2;
    cfg.trials = 10;
    cfg.max_iters = 40;
    cfg
}

fn text(cell: &Cell) -> &str {
    match cell {
        Cell::Text(s) => s,
        other => panic!("expected text, got {other:?}"),
    }
}

#[test]
fn every_row_matches_its_header() {
    for exp in Experiment::ALL {
        let mut cfg = small(exp);
        if exp == Experiment::Search {
            cfg.s0_list = Some(vec![0.5]);
        }
        if exp == Experiment::Minimality {
            cfg.beta_list = Some(vec![2.0]);
            cfg.d = Some(12);
        }
        let out = experiments::run(&cfg, 3).unwrap();
        assert_eq!(out.columns, experiments::columns(exp), "{exp}");
        assert!(!out.rows.is_empty(), "{exp}");
        for row in &out.rows {
            assert_eq!(row.len(), out.columns.len(), "{exp}");
        }
        let csv = out.to_csv();
        assert_eq!(csv.lines().count(), out.rows.len() + 1);
    }
}

#[test]
fn channel_check_passes_at_defaults() {
    let out = experiments::run(&small(Experiment::ChannelCheck), 0).unwrap();
    for row in &out.rows {
        assert_eq!(text(&row[3]), "true", "{}", text(&row[0]));
    }
}

#[test]
fn stationarity_separates_thermal_from_random() {
    let out = experiments::run(&small(Experiment::Stationarity), 0).unwrap();
    let scaled = |row: &Vec<Cell>| match row[3] {
        Cell::Float(x) => x,
        _ => unreachable!(),
    };
    for row in &out.rows {
        if text(&row[0]).starts_with("thermal") {
            assert!(scaled(row) < 1e-2);
        } else {
            assert!(scaled(row) > 1e-2);
        }
    }
}

#[test]
fn same_seed_same_table() {
    let cfg = small(Experiment::EnergyLagrangian);
    let a = experiments::run(&cfg, 11).unwrap();
    let b = experiments::run(&cfg, 11).unwrap();
    let c = experiments::run(&cfg, 12).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn search_finding_requires_confirmation() {
    let mut cfg = small(Experiment::Search);
    cfg.s0_list = Some(vec![0.5]);
    let out = experiments::run(&cfg, 5).unwrap();
    assert!(!out.finding);
    assert_eq!(out.rows.len(), 3);
    assert_eq!(out.metrics["runs"].as_array().unwrap().len(), 3);
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = small(Experiment::Benchmark);
    cfg.d = Some(4);
    cfg.s0 = Some(2.0);
    let err = experiments::run(&cfg, 0).unwrap_err().to_string();
    assert!(err.contains("max entropy"), "{err}");
}

#[test]
fn float_cells_round_trip() {
    let x = 0.1 + 0.2;
    let cell = Cell::Float(x);
    assert_eq!(cell.to_csv().parse::<f64>().unwrap(), x);
}
