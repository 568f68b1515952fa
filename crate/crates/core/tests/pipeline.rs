use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use riskbench_core::dataset::HasHeader;
use riskbench_core::learner::{fit, predict_risk, score, SolverMode};
use riskbench_core::source::{generate_synthetic, DataSource};
use riskbench_core::table::{to_scoring_table, ScoringTable};
use riskbench_core::validation::validate;
use riskbench_core::{build_dataset, workflow, DataSet, FeatureRegistry, FitConfig, ProjectConfig, ProjectStore, RiskModel};

const REGISTRY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/features.toml");
const INPUTS: [&str; 5] = ["diabetes", "hla_mismatch", "donor_type", "blood_group", "biopsy"];

fn registry() -> &'static FeatureRegistry {
    static REG: OnceLock<FeatureRegistry> = OnceLock::new();
    REG.get_or_init(|| FeatureRegistry::load(REGISTRY).unwrap())
}

fn dataset(seed: u64, n: usize) -> DataSet {
    let config = ProjectConfig::new("p", "graft_loss_3y", &INPUTS);
    let pool = generate_synthetic(seed, n, registry(), None).unwrap();
    let records = pool.fetch(None, &config.specs(registry()).unwrap()).unwrap();
    build_dataset(&config, &records, registry()).unwrap()
}

fn fitted() -> &'static (DataSet, RiskModel, ScoringTable) {
    static FIT: OnceLock<(DataSet, RiskModel, ScoringTable)> = OnceLock::new();
    FIT.get_or_init(|| {
        let ds = dataset(11, 600);
        let cfg = FitConfig {
            solver_mode: SolverMode::Heuristic,
            max_model_size: 4,
            time_limit_seconds: 5.0,
            ..FitConfig::default()
        };
        let model = fit(&ds, &cfg).unwrap();
        let (table, warnings) = to_scoring_table(&model, registry());
        assert!(warnings.is_empty(), "{warnings:?}");
        (ds, model, table)
    })
}

fn selection(table: &ScoringTable, columns: &[String], row: &[i64]) -> BTreeMap<String, i64> {
    table
        .items
        .iter()
        .map(|it| {
            let j = columns.iter().position(|c| c == &it.column).unwrap();
            (it.column.clone(), row[j])
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn table_risk_matches_model(i in 0usize..600) {
        let (ds, model, table) = fitted();
        let row = ds.inputs(i);
        let (total, risk) = table.evaluate(&selection(table, model.columns(), row)).unwrap();
        prop_assert_eq!(total, score(model, row).unwrap());
        prop_assert!((risk - predict_risk(model, row).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn table_rebuilds_model(bias in -20i64..=20, coefs in prop::collection::vec(-5i64..=5, 13)) {
        let columns = dataset(1, 1).header().to_vec();
        let model = RiskModel::new(columns.clone(), bias, coefs.clone()).unwrap();
        let (table, _) = to_scoring_table(&model, registry());
        prop_assert_eq!(table.coefficients(&columns[1..]).unwrap(), coefs);
        prop_assert_eq!(table.bias, bias);
        let back = RiskModel::from_json(&model.to_json()).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn stored_workflow_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore::open(dir.path(), Arc::new(registry().clone())).unwrap();
    let config = ProjectConfig::new("p", "graft_loss_3y", &INPUTS);
    let id = store.create_project(&config).unwrap().id;
    let pool = generate_synthetic(11, 600, registry(), None).unwrap();
    workflow::create_dataset(&store, &pool, &id, "train", None).unwrap();
    let (ds, _, _) = fitted();
    assert_eq!(&store.load_dataset(&id, "train").unwrap(), ds);

    let cfg = FitConfig {
        solver_mode: SolverMode::Exact,
        max_model_size: 1,
        ..FitConfig::default()
    };
    let (model, summary) =
        workflow::fit_and_save(&store, &id, "train", "m", &cfg, &Default::default()).unwrap();
    assert_eq!(summary.model_size, model.model_size());
    assert_eq!(store.load_model(&id, "m").unwrap(), model);

    let stored = workflow::validate_stored(&store, &id, "m", None, "train", None).unwrap();
    let direct = validate(&model, ds, None).unwrap();
    assert_eq!(stored.rows, direct.rows);
    assert_eq!(stored.model_ref, "graft_loss_3y/p/m");
}
