mod common;

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use common::{cluster, configs, model};
use trainsim::config::{from_json, from_toml, load, to_json, to_toml, Axis, AxisValue, ClusterConfig, SweepSpec};
use trainsim::sweep::run_sweep;
use trainsim::workload::ModelHyperParams;

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(path: &Path) {
    let value: T = load(path).unwrap();
    let via_toml: T = from_toml(&to_toml(&value).unwrap()).unwrap();
    let via_json: T = from_json(&to_json(&value).unwrap()).unwrap();
    assert_eq!(via_toml, value, "{}", path.display());
    assert_eq!(via_json, value, "{}", path.display());
}

fn each_file(dir: &str, f: impl Fn(&Path)) {
    let mut n = 0;
    for entry in fs::read_dir(configs().join(dir)).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            f(&path);
            n += 1;
        }
    }
    assert!(n > 0, "no files in {dir}");
}

#[test]
fn shipped_configs_round_trip() {
    each_file("models", round_trip::<ModelHyperParams>);
    each_file("clusters", round_trip::<ClusterConfig>);
    each_file("sweeps", round_trip::<SweepSpec>);
}

#[test]
fn shipped_configs_validate() {
    each_file("clusters", |p| trainsim::config::load_cluster(p).map(|_| ()).unwrap());
    each_file("sweeps", |p| trainsim::config::load_sweep(p).map(|_| ()).unwrap());
    each_file("models", |p| trainsim::config::load_model(p).map(|_| ()).unwrap());
}

#[test]
fn unknown_fields_are_rejected() {
    let text = fs::read_to_string(configs().join("models/transformer_1t.toml")).unwrap();
    let err = from_toml::<ModelHyperParams>(&format!("{text}\nhidden = 3\n")).unwrap_err();
    assert!(matches!(err, trainsim::Error::Parse { .. }), "{err:?}");
}

fn small_model() -> ModelHyperParams {
    let mut hp = model("transformer_1t.toml");
    hp.d_model = 256;
    hp.n_stacks = 2;
    hp.n_heads = 1024;
    hp.d_k = 1;
    hp.d_v = 1;
    hp.ff_dim = 1024;
    hp.vocab = 2048;
    hp.seq = 32;
    hp.mini_batch = 1;
    hp.global_batch = 2048;
    hp
}

fn axes() -> impl Strategy<Value = Vec<Axis>> {
    let numbers = |path: &'static str, lo: f64, hi: f64| {
        prop::collection::vec(lo..hi, 1..4).prop_map(move |v| Axis {
            path: path.into(),
            values: v.into_iter().map(AxisValue::Number).collect(),
        })
    };
    let mp_dp = prop::sample::subsequence(vec!["1024x1", "64x16", "8x128", "1x1024"], 1..4)
        .prop_map(|v| Axis { path: "mp_dp".into(), values: v.into_iter().map(|s| AxisValue::Text(s.into())).collect() });
    let zero = prop::sample::subsequence(vec![0.0, 1.0, 2.0, 3.0], 1..4)
        .prop_map(|v| Axis { path: "zero".into(), values: v.into_iter().map(AxisValue::Number).collect() });
    (
        prop::option::of(mp_dp),
        prop::option::of(zero),
        prop::option::of(numbers("node.lm_bw_gbps", 100.0, 3000.0)),
        prop::option::of(numbers("network.latency_us", 0.0, 10.0)),
    )
        .prop_map(|(a, b, c, d)| [a, b, c, d].into_iter().flatten().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sweep_rows_are_the_product_of_axis_lengths(axes in axes()) {
        let expected: usize = axes.iter().map(|a| a.values.len()).product();
        let spec = SweepSpec { axes, ..Default::default() };
        let table = run_sweep(&small_model(), &cluster("dgx_a100.toml"), &spec, Path::new("."), 2).unwrap();
        prop_assert_eq!(table.rows.len(), expected);
        let mut sorted = table.columns.clone();
        sorted.sort();
        prop_assert_eq!(&sorted, &table.columns);
        for row in &table.rows {
            prop_assert_eq!(row.values.len(), table.columns.len());
        }
    }
}
