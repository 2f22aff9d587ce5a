use hvfcast_core::arch::{build_model, load_weights, ModelSpec, Provenance};
use hvfcast_core::hvf::{GRID_COLS, GRID_ROWS};
use hvfcast_core::pipeline::{make_pairs, split_patients, BinnedPairs, FeatureCombo, IntervalBin, SplitPlan};
use hvfcast_core::synth::{generate_cohort, CohortConfig};
use hvfcast_core::trainer::{
    evaluate_mae, select_architecture, select_features, train_interval_chain, train_model, ChainInit, TrainConfig,
};
use hvfcast_nn::Tensor;

fn data(patients: usize, seed: u64) -> (BinnedPairs, SplitPlan) {
    let cohort = generate_cohort(&CohortConfig {
        patients,
        tests_per_eye: (6, 10),
        span_years: (5.5, 8.0),
        seed,
        ..CohortConfig::default()
    })
    .unwrap();
    let plan = split_patients(&cohort.fields, 0.8, seed).unwrap();
    (BinnedPairs::from_pairs(make_pairs(&cohort.fields)), plan)
}

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        widths: [2, 3, 4],
        ..TrainConfig::desk(9)
    }
}

fn bin(i: usize) -> IntervalBin {
    IntervalBin::from_index(i).unwrap()
}

fn input(seed: u64) -> Tensor {
    let data = (0..2 * GRID_ROWS * GRID_COLS).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 3.0).collect();
    Tensor::new(vec![2, 1, GRID_ROWS, GRID_COLS], data).unwrap()
}

/// Zeroes the slots through which Cascade block `j` feeds later blocks and the head.
fn cut_block_output(model: &mut hvfcast_core::arch::Model, j: usize) {
    let spec = model.spec.clone();
    let (cin, w, k) = (spec.in_channels, spec.widths[2], spec.depth_k.unwrap());
    let channels = cin + (j - 1) * w..cin + j * w;
    let mut consumers: Vec<String> = (j + 1..=k).map(|b| format!("block{b}.conv1.weight")).collect();
    consumers.push("head.weight".into());
    for name in consumers {
        let id = model.params.id(&name).unwrap();
        let t = &mut model.params.get_mut(id).value;
        let shape = t.shape().to_vec();
        let (cout, cin_all, kk) = (shape[0], shape[1], shape[2] * shape[3]);
        let data = t.data_mut();
        for o in 0..cout {
            for c in channels.clone() {
                assert!(c < cin_all);
                data[(o * cin_all + c) * kk..(o * cin_all + c + 1) * kk].fill(0.0);
            }
        }
    }
}

fn perturb(model: &mut hvfcast_core::arch::Model, prefix: &str) {
    for p in model.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
        p.value.data_mut().iter_mut().for_each(|v| *v += 0.37);
    }
}

#[test]
fn cascade_blocks_reach_every_later_block_and_the_head() {
    let spec = ModelSpec::from_name("Cascade-3", [2, 3, 4], 1, 4).unwrap();
    let x = input(1);
    for j in 1..=3 {
        let base = build_model(&spec).unwrap();
        let mut moved = base.clone();
        perturb(&mut moved, &format!("block{j}."));
        assert_ne!(base.predict(&x).unwrap(), moved.predict(&x).unwrap(), "block {j} has no effect");

        let mut cut = base.clone();
        cut_block_output(&mut cut, j);
        let reference = cut.predict(&x).unwrap();
        let mut cut_moved = cut.clone();
        perturb(&mut cut_moved, &format!("block{j}."));
        assert_eq!(reference, cut_moved.predict(&x).unwrap(), "block {j} leaks past its concat slots");
    }
    // Cutting only the head slot of block 1 leaves its path through later blocks.
    let base = build_model(&spec).unwrap();
    let mut head_only = base.clone();
    let id = head_only.params.id("head.weight").unwrap();
    let t = &mut head_only.params.get_mut(id).value;
    let cin_all = t.shape()[1];
    for o in 0..t.shape()[0] {
        for c in 1..5 {
            t.data_mut()[(o * cin_all + c) * 9..(o * cin_all + c + 1) * 9].fill(0.0);
        }
    }
    let mut moved = head_only.clone();
    perturb(&mut moved, "block1.");
    assert_ne!(head_only.predict(&x).unwrap(), moved.predict(&x).unwrap());
}

#[test]
fn best_snapshot_survives_a_reload() {
    let (binned, plan) = data(30, 2);
    let (train, val) = plan.fold_pairs(binned.get(bin(0)), 3);
    let spec = ModelSpec::from_name("FullBN-3", [2, 3, 4], 1, 5).unwrap();
    let out = train_model(build_model(&spec).unwrap(), &train, &val, FeatureCombo::none(), &tiny(4), 5).unwrap();
    let h = &out.history;
    let best = h.best_epoch.unwrap();
    assert_eq!(h.val_mae[best - 1], h.best_val_mae.unwrap());
    assert_eq!(h.best_val_mae.unwrap(), h.val_mae.iter().copied().fold(f64::INFINITY, f64::min));

    let dir = tempfile::tempdir().unwrap();
    out.model.save_weights(dir.path(), Provenance::default()).unwrap();
    let (back, _) = load_weights(dir.path()).unwrap();
    assert_eq!(back.weights_digest(), h.frozen_digest);
    assert_eq!(evaluate_mae(&back, &val, FeatureCombo::none()).unwrap(), h.best_val_mae.unwrap());
}

#[test]
fn zero_epoch_chain_carries_the_fresh_weights_through_every_bin() {
    let (binned, plan) = data(40, 3);
    let spec = ModelSpec::from_name("FullBN-3", [2, 3, 4], 1, 0).unwrap();
    let r = train_interval_chain(&spec, FeatureCombo::none(), &binned, &plan, &tiny(0), &ChainInit::Fresh, 2, None)
        .unwrap();
    assert_eq!(r.entries.len() + r.gaps.len(), 100);
    assert!(r.entries.len() >= 90, "{:?}", r.gaps);
    for fold in 0..10 {
        let entries: Vec<_> = r.entries.iter().filter(|e| e.fold == fold).collect();
        assert_eq!(entries[0].init_source, "fresh");
        for e in &entries {
            assert_eq!(e.initial_digest, entries[0].initial_digest);
            assert_eq!(e.frozen_digest, e.initial_digest);
        }
    }
}

#[test]
fn chain_bins_start_from_the_previous_bin() {
    let (binned, plan) = data(40, 4);
    let spec = ModelSpec::from_name("Cascade-3", [2, 3, 4], 1, 0).unwrap();
    let r = train_interval_chain(&spec, FeatureCombo::none(), &binned, &plan, &tiny(1), &ChainInit::Fresh, 1, None)
        .unwrap();
    for fold in 0..10 {
        let entries: Vec<_> = r.entries.iter().filter(|e| e.fold == fold).collect();
        let gaps = r.gaps.iter().filter(|g| g.fold == fold).count();
        assert_eq!(entries.len() + gaps, 10);
        for w in entries.windows(2) {
            assert_eq!(w[1].initial_digest, w[0].frozen_digest);
            assert_eq!(w[1].init_source, w[0].bin.label());
        }
    }
}

#[test]
fn hvf_only_feature_job_replays_the_architecture_job() {
    let (binned, plan) = data(30, 6);
    let spec = ModelSpec::from_name("Cascade-3", [2, 3, 4], 1, 0).unwrap();
    let cfg = tiny(2);
    let arch = select_architecture(std::slice::from_ref(&spec), binned.get(bin(0)), &plan, &cfg, 1, None).unwrap();
    let feat = select_features(&spec, &[FeatureCombo::none()], binned.get(bin(0)), &plan, &cfg, 1, None).unwrap();
    assert_eq!(arch.matrix, feat.matrix);
    assert_eq!(arch.means, feat.means);
}

#[test]
fn worker_count_does_not_change_a_phase() {
    let (binned, plan) = data(30, 7);
    let specs: Vec<ModelSpec> = ["FullyConnected", "FullBN-3"]
        .iter()
        .map(|n| ModelSpec::from_name(n, [2, 3, 4], 1, 0).unwrap())
        .collect();
    let cfg = tiny(1);
    let one = select_architecture(&specs, binned.get(bin(0)), &plan, &cfg, 1, None).unwrap();
    let four = select_architecture(&specs, binned.get(bin(0)), &plan, &cfg, 4, None).unwrap();
    assert_eq!(one, four);
}
