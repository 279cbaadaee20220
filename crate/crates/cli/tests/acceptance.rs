//! Acceptance checks, one test per numbered criterion. The harness line
//! (`test criterion_NN_... ok`) is the pass/fail verdict; each test also
//! prints one evidence line, visible with
//! `cargo test -p dimix-cli --test acceptance -- --nocapture`.

use std::time::Instant;

use dimix_core::attention::{ButterflyAttention, TokenParallelAttention, TransformerBlock, Vit};
use dimix_core::block_mlp::{BlockMlp, ButterflyMlp, DenseMlp};
use dimix_core::butterfly::{compute_stride, num_butterfly_layers, ButterflySchedule};
use dimix_core::debut::{validate_debut_composition, DebutFactor};
use dimix_core::mixing::{
    build_mixing_graph, check_complete_mixing, cost_report, jacobian_density, MixingGraph,
    MixingReport, MixingSchedule,
};
use dimix_core::patch_mixer::{PatchOnlyMixer, PatchSchedule};
use dimix_core::tensor::grad_check;
use dimix_core::{DetRng, Error, Tensor};

use dimix_cli::config::{DatasetKind, Family, MixFlavor};
use dimix_cli::model::Model;
use dimix_cli::{bench, data, memtrack, train, ExperimentConfig};

const RADICES: [usize; 5] = [2, 4, 8, 16, 32];

fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn bits_equal_f64(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn criterion_01_permutation_round_trip_and_strides() {
    let t0 = Instant::now();
    let mut rng = DetRng::new(101);
    let mut schedules = 0usize;
    let mut layers_checked = 0usize;
    for n in 2..=1024usize {
        for radix in RADICES {
            if n % radix != 0 {
                continue;
            }
            let Ok(plan) = ButterflySchedule::new(n, radix) else {
                continue;
            };
            assert_eq!(plan.layers(), num_butterfly_layers(n, radix));
            let data: Vec<f32> = (0..2 * n).map(|_| rng.uniform(-8.0, 8.0) as f32).collect();
            let x = Tensor::from_vec(&[2, n], data.clone()).unwrap();
            for layer in 0..plan.layers() {
                let hand = ((radix as u128).pow(layer as u32)).min((n / radix) as u128) as usize;
                assert_eq!(plan.stride(layer), hand, "stride n={n} r={radix} layer={layer}");
                assert_eq!(compute_stride(n, radix, layer), hand);
                let permuted = plan.permute(&x, layer).unwrap();
                let back = plan.unpermute(&permuted, layer).unwrap();
                assert!(
                    bits_equal(&back.value(), &data),
                    "round trip broke bits at n={n} r={radix} layer={layer}"
                );
                layers_checked += 1;
            }
            schedules += 1;
        }
    }
    assert!(schedules >= 80, "only {schedules} schedules constructed");
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.2}s, budget is 10s");
    eprintln!(
        "criterion 01 PASS: {schedules} schedules / {layers_checked} layers round-trip bitwise, \
         strides equal min(r^i, n/r), {secs:.2}s"
    );
}

#[test]
fn criterion_02_radix_n_butterfly_matches_plain_mlp_bitwise() {
    for n in [8usize, 16, 64] {
        let mut rng = DetRng::new(2000 + n as u64);
        let plan = ButterflySchedule::new(n, n).unwrap();
        assert_eq!(plan.layers(), 1);
        let bf = ButterflyMlp::<f64>::with_expansion(plan, 2, &mut rng).unwrap();
        let bf_params = bf.params();
        assert_eq!(bf_params.len(), 4);

        // plain MLP as a single block spanning the full width
        let mut rng2 = DetRng::new(1);
        let plain = BlockMlp::<f64>::new(1, &[n, 2 * n, n], &mut rng2);
        for (dst, src) in plain.params().iter().zip(&bf_params) {
            dst.set_data(&src.value()).unwrap();
        }

        // plain MLP as an ordinary dense stack; params order is all
        // weights then all biases, the butterfly interleaves per layer
        let dense = DenseMlp::<f64>::new(&[n, 2 * n, n], &mut rng2);
        let dense_params = dense.params();
        for (di, bi) in [(0usize, 0usize), (1, 2), (2, 1), (3, 3)] {
            dense_params[di].set_data(&bf_params[bi].value()).unwrap();
        }

        let x = Tensor::<f64>::uniform(&[3, n], -1.0, 1.0, &mut rng);
        let a = bf.forward(&x).unwrap().value();
        let b = plain.forward(&x).unwrap().value();
        let c = dense.forward(&x).unwrap().value();
        assert!(bits_equal_f64(&a, &b), "butterfly vs block diverged at n={n}");
        assert!(bits_equal_f64(&a, &c), "butterfly vs dense diverged at n={n}");
    }
    eprintln!(
        "criterion 02 PASS: radix-N butterfly equals plain MLP bitwise for N in {{8, 16, 64}}"
    );
}

/// Boolean matrix product oracle: per-stage adjacency (with identity rows
/// for dims no unit writes) folded over the stages, rows packed into u64
/// words. Independent of the engine's BitRow propagation.
fn boolean_product_reach(schedule: &MixingSchedule) -> Vec<Vec<u64>> {
    let w = schedule.width();
    let words = w.div_ceil(64);
    let mut reach: Vec<Vec<u64>> = (0..w)
        .map(|j| {
            let mut row = vec![0u64; words];
            row[j / 64] |= 1 << (j % 64);
            row
        })
        .collect();
    for stage in schedule.stages() {
        let mut writers: Vec<Option<Vec<usize>>> = vec![None; w];
        for unit in stage {
            for &o in &unit.outputs {
                writers[o].get_or_insert_with(Vec::new).extend(unit.inputs.iter().copied());
            }
        }
        reach = (0..w)
            .map(|j| match &writers[j] {
                None => reach[j].clone(),
                Some(ins) => {
                    let mut row = vec![0u64; words];
                    for &i in ins {
                        for (a, b) in row.iter_mut().zip(&reach[i]) {
                            *a |= *b;
                        }
                    }
                    row
                }
            })
            .collect();
    }
    reach
}

#[test]
fn criterion_03_full_schedules_complete_and_truncations_reach_powers() {
    let mut full = 0usize;
    for n in 2..=256usize {
        for radix in RADICES {
            if n % radix != 0 {
                continue;
            }
            let Ok(plan) = ButterflySchedule::new(n, radix) else {
                continue;
            };
            let schedule = MixingSchedule::from_butterfly(&plan);
            let oracle = boolean_product_reach(&schedule);
            let graph = build_mixing_graph(schedule);
            let report = check_complete_mixing(&graph);
            assert!(report.complete, "n={n} r={radix} not complete");
            for j in 0..n {
                for i in 0..n {
                    let oracle_bit = oracle[j][i / 64] >> (i % 64) & 1 == 1;
                    assert_eq!(
                        oracle_bit,
                        graph.reaches(i, j),
                        "oracle mismatch n={n} r={radix} i={i} j={j}"
                    );
                }
            }
            full += 1;
        }
    }
    assert!(full >= 50, "only {full} full schedules constructed");

    let mut truncated = 0usize;
    for radix in RADICES {
        let mut n = radix * radix;
        while n <= 256 {
            let layers = num_butterfly_layers(n, radix);
            let plan = ButterflySchedule::with_layers(n, radix, layers - 1).unwrap();
            assert!(plan.is_partial());
            let report =
                check_complete_mixing(&build_mixing_graph(MixingSchedule::from_butterfly(&plan)));
            assert!(!report.complete, "n={n} r={radix} with {} layers", layers - 1);
            let want = radix.pow(layers as u32 - 1);
            assert!(
                report.per_input_reach_counts.iter().all(|&c| c == want),
                "n={n} r={radix}: truncated reach != {want}"
            );
            truncated += 1;
            n *= radix;
        }
    }
    eprintln!(
        "criterion 03 PASS: {full} full schedules complete and equal to the boolean product \
         oracle, {truncated} truncated schedules reach exactly r^(L-1)"
    );
}

#[test]
fn criterion_04_jacobian_density_matches_structure() {
    let t0 = Instant::now();
    let mut rng = DetRng::new(404);

    let full_mlp = ButterflyMlp::<f64>::with_expansion(
        ButterflySchedule::new(64, 8).unwrap(),
        2,
        &mut rng,
    )
    .unwrap();
    let f = |x: &Tensor<f64>| -> dimix_core::Result<Tensor<f64>> {
        full_mlp.forward(&x.reshape(&[1, 64])?)?.reshape(&[64])
    };
    let full_density = jacobian_density(&f, 64, 2, &mut rng).unwrap();
    assert!((full_density - 1.0).abs() < 1e-10, "full butterfly MLP density {full_density}");

    let one_mlp = ButterflyMlp::<f64>::with_expansion(
        ButterflySchedule::with_layers(64, 8, 1).unwrap(),
        2,
        &mut rng,
    )
    .unwrap();
    let g = |x: &Tensor<f64>| -> dimix_core::Result<Tensor<f64>> {
        one_mlp.forward(&x.reshape(&[1, 64])?)?.reshape(&[64])
    };
    let one_density = jacobian_density(&g, 64, 2, &mut rng).unwrap();
    assert!((one_density - 0.125).abs() < 1e-10, "single layer density {one_density} != 8/64");

    // attention stack over 16 tokens, blocks of 4, probed through dim 4
    let (dim, seq) = (4usize, 16usize);
    let full_att = ButterflyAttention::<f64>::new(
        ButterflySchedule::new(seq, 4).unwrap(),
        2,
        dim,
        2,
        2,
        &mut rng,
    )
    .unwrap();
    let h = |x: &Tensor<f64>| -> dimix_core::Result<Tensor<f64>> {
        full_att.forward(&x.reshape(&[1, seq, dim])?, None)?.reshape(&[seq * dim])
    };
    let att_density = jacobian_density(&h, seq * dim, 2, &mut rng).unwrap();
    assert!((att_density - 1.0).abs() < 1e-10, "attention stack density {att_density}");

    let one_att = ButterflyAttention::<f64>::new(
        ButterflySchedule::new(seq, 4).unwrap(),
        1,
        dim,
        2,
        2,
        &mut rng,
    )
    .unwrap();
    let k = |x: &Tensor<f64>| -> dimix_core::Result<Tensor<f64>> {
        one_att.forward(&x.reshape(&[1, seq, dim])?, None)?.reshape(&[seq * dim])
    };
    let one_att_density = jacobian_density(&k, seq * dim, 2, &mut rng).unwrap();
    assert!(
        (one_att_density - 0.25).abs() < 1e-10,
        "single attention layer density {one_att_density} != 4/16"
    );

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "took {secs:.1}s, budget is 60s");
    eprintln!(
        "criterion 04 PASS: densities 1.0 / 0.125 (butterfly MLP) and 1.0 / 0.25 (attention), \
         {secs:.1}s"
    );
}

#[test]
fn criterion_05_attention_stride_pairings() {
    let a = (8usize, 1usize);
    let b = (8, 8);
    let c = (16, 1);
    let d = (4, 16);
    let e = (8, 4);
    let f = (64, 1);
    let complete = [(a, b, "a+b"), (c, d, "c+d"), (c, b, "c+b"), (c, f, "c+f")];
    let incomplete = [(a, e, "a+e"), (a, a, "a+a")];
    for (first, second, label) in complete {
        let schedule = MixingSchedule::from_attention(64, &[first, second]).unwrap();
        let report = check_complete_mixing(&build_mixing_graph(schedule));
        assert!(report.complete, "{label} should mix completely");
    }
    for (first, second, label) in incomplete {
        let schedule = MixingSchedule::from_attention(64, &[first, second]).unwrap();
        let report = check_complete_mixing(&build_mixing_graph(schedule));
        assert!(!report.complete, "{label} should not mix completely");
        assert!(!report.missing_pairs.is_empty(), "{label} needs witnesses");
    }
    eprintln!(
        "criterion 05 PASS: over 64 tokens the pairs a+b, c+d, c+b, c+f mix completely; \
         a+e and a+a do not"
    );
}

#[test]
fn criterion_06_gradients_agree_with_finite_differences() {
    let h = 1e-5;
    let tol = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut track = |err: f64| {
        assert!(err < tol, "gradient error {err}");
        if err > worst {
            worst = err;
        }
        checked += 1;
    };

    let mut rng = DetRng::new(606);
    let block = BlockMlp::<f64>::new(4, &[4, 8, 4], &mut rng);
    let x = Tensor::<f64>::uniform(&[2, 16], -1.0, 1.0, &mut rng).with_grad();
    let f = || block.forward(&x).unwrap().gelu().sum_all();
    track(grad_check(&f, &x, h).unwrap());
    for p in block.params() {
        track(grad_check(&f, &p, h).unwrap());
    }

    let tb = TransformerBlock::<f64>::new(8, 2, 2, &mut rng).unwrap();
    let x = Tensor::<f64>::uniform(&[1, 4, 8], -1.0, 1.0, &mut rng).with_grad();
    let f = || tb.forward(&x, None).unwrap().gelu().sum_all();
    track(grad_check(&f, &x, h).unwrap());
    for p in tb.params() {
        track(grad_check(&f, &p, h).unwrap());
    }

    let att = ButterflyAttention::<f64>::new(
        ButterflySchedule::new(16, 4).unwrap(),
        2,
        8,
        2,
        2,
        &mut rng,
    )
    .unwrap();
    let x = Tensor::<f64>::uniform(&[1, 16, 8], -1.0, 1.0, &mut rng).with_grad();
    let f = || att.forward(&x, None).unwrap().gelu().sum_all();
    track(grad_check(&f, &x, h).unwrap());
    for blk in att.blocks() {
        for p in blk.params() {
            track(grad_check(&f, &p, h).unwrap());
        }
    }

    let mixer = PatchOnlyMixer::<f64>::new(
        PatchSchedule::new(6, 2, &[3]).unwrap(),
        1,
        2,
        3,
        &mut rng,
    )
    .unwrap();
    let x = Tensor::<f64>::uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut rng).with_grad();
    let f = || mixer.forward(&x).unwrap().gelu().sum_all();
    track(grad_check(&f, &x, h).unwrap());
    for p in mixer.params() {
        track(grad_check(&f, &p, h).unwrap());
    }

    eprintln!(
        "criterion 06 PASS: {checked} tensors across four models, worst gradient error \
         {worst:.2e} < 1e-4"
    );
}

#[test]
fn criterion_07_cost_accounting_is_exact() {
    // parameter counts equal a raw walk over every family's tensors
    let mut families: Vec<(String, ExperimentConfig)> = Vec::new();
    let mut cfg = ExperimentConfig::default();
    cfg.dims = 64;
    cfg.radix = 8;
    cfg.layers = 2;
    families.push(("butterfly_mlp".into(), cfg.clone()));
    cfg.family = Family::BlockMlp;
    cfg.layers = 1;
    families.push(("block_mlp".into(), cfg.clone()));
    let mut img = ExperimentConfig::default();
    img.dataset = DatasetKind::TileClass;
    img.patch = 8;
    img.dim = 32;
    img.heads = 4;
    img.layers = 2;
    img.radix = 4;
    img.expansion = 2;
    img.patch_sizes = vec![4, 2];
    for flavor in [MixFlavor::Dense, MixFlavor::ButterflyLinear, MixFlavor::Butterfly] {
        img.family = Family::Mixer;
        img.mix = flavor;
        families.push((format!("mixer/{flavor:?}"), img.clone()));
    }
    for family in [Family::PatchOnly, Family::Vit, Family::ButterflyVit] {
        img.family = family;
        families.push((format!("{family:?}"), img.clone()));
    }
    for (label, cfg) in &families {
        let model = Model::build(cfg).unwrap();
        let x = model.dummy_input(1);
        let report = cost_report(&model, || model.forward(&x)).unwrap();
        let walk: usize = model.params().iter().map(Tensor::len).sum();
        assert_eq!(report.params, walk, "params mismatch for {label}");
        let module_sum: usize = report.modules.iter().map(|m| m.params).sum();
        assert_eq!(module_sum, walk, "module split mismatch for {label}");
    }

    // attention score MACs per layer: S*a*D banded vs S*S*D dense, exact,
    // with the head count cancelling
    let (patch, dim, depth) = (4usize, 16usize, 2usize);
    let seq = (32 / patch) * (32 / patch);
    for heads in [4usize, 8] {
        let mut rng = DetRng::new(707);
        let dense = Vit::<f32>::dense(32, 3, patch, dim, depth, heads, 2, 10, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 3, 32, 32]);
        let report = cost_report(&dense, || dense.forward(&x)).unwrap();
        assert_eq!(report.score_macs, (depth * seq * seq * dim) as u64, "dense h={heads}");

        let bf = Vit::<f32>::butterfly(32, 3, patch, dim, depth, heads, 2, 8, 10, &mut rng)
            .unwrap();
        let report = cost_report(&bf, || bf.forward(&x)).unwrap();
        assert_eq!(report.score_macs, (depth * seq * 8 * dim) as u64, "banded h={heads}");
    }

    // data movement: one butterfly MLP layer costs a permute plus an
    // unpermute, so one full layer is 2 and a stacked linear pair is 4
    let mut rng = DetRng::new(708);
    let one = ButterflyMlp::<f32>::with_expansion(
        ButterflySchedule::with_layers(64, 8, 1).unwrap(),
        2,
        &mut rng,
    )
    .unwrap();
    let x = Tensor::<f32>::uniform(&[2, 64], -1.0, 1.0, &mut rng);
    one.forward(&x).unwrap();
    assert_eq!(one.permutation_count(), 2);
    let pair = ButterflyMlp::<f32>::with_expansion(
        ButterflySchedule::with_layers(64, 8, 2).unwrap(),
        1,
        &mut rng,
    )
    .unwrap();
    pair.forward(&x).unwrap();
    assert_eq!(pair.permutation_count(), 4);

    eprintln!(
        "criterion 07 PASS: params equal raw walks for {} family builds, score MACs equal \
         S*a*D vs S*S*D per layer for 4 and 8 heads, permutations 2 vs 4",
        families.len()
    );
}

#[test]
fn criterion_08_debut_composition_rules() {
    let strict_left = DebutFactor::new(8, 8, 2, 2, 4).unwrap();
    let strict_right = DebutFactor::new(8, 8, 4, 4, 1).unwrap();
    let strict = validate_debut_composition(&strict_left, &strict_right).unwrap();
    assert!(strict.dense_original_rule && strict.dense_relaxed_rule);
    assert!(strict.dense_product && strict.dense_structural && strict.dense_numeric);
    assert_eq!(strict.effective_partition, (8, 8));

    let relaxed_left = DebutFactor::new(8, 8, 4, 4, 2).unwrap();
    let relaxed = validate_debut_composition(&relaxed_left, &strict_right).unwrap();
    assert!(!relaxed.dense_original_rule && relaxed.dense_relaxed_rule);
    assert!(relaxed.dense_product && relaxed.dense_structural && relaxed.dense_numeric);
    assert_eq!(relaxed.effective_partition, (8, 8));

    let oversized_right = DebutFactor::new(8, 8, 2, 2, 1).unwrap();
    let broken = validate_debut_composition(&strict_left, &oversized_right).unwrap();
    assert!(!broken.dense_original_rule && !broken.dense_relaxed_rule);
    assert!(!broken.dense_product && !broken.dense_structural && !broken.dense_numeric);

    for comp in [&strict, &relaxed, &broken] {
        assert_eq!(comp.dense_structural, comp.dense_numeric, "support vs numeric at 1e-12");
    }

    let narrow = DebutFactor::new(8, 4, 2, 2, 2).unwrap();
    assert!(matches!(
        validate_debut_composition(&narrow, &strict_right),
        Err(Error::Incomposable(_))
    ));
    let t1_not_dense = DebutFactor::new(8, 8, 2, 2, 2).unwrap();
    assert!(matches!(
        validate_debut_composition(&strict_left, &t1_not_dense),
        Err(Error::Incomposable(_))
    ));
    let t2_flat = DebutFactor::new(8, 8, 4, 4, 1).unwrap();
    assert!(matches!(
        validate_debut_composition(&t2_flat, &strict_right),
        Err(Error::Incomposable(_))
    ));

    eprintln!(
        "criterion 08 PASS: strict and relaxed compositions densify, t2 > r1 does not, \
         structural and numeric verdicts agree, malformed pairings error"
    );
}

#[test]
fn criterion_09_wout_absorption_and_group_savings() {
    let mut rng = DetRng::new(909);
    let tpa = TokenParallelAttention::<f64>::new(16, 4, 1, true, &mut rng).unwrap();
    let absorbed = tpa.absorb_wout().unwrap();
    let x = Tensor::<f64>::uniform(&[2, 6, 16], -1.0, 1.0, &mut rng);
    let before = tpa.forward(&x, None).unwrap().value();
    let after = absorbed.forward(&x, None).unwrap().value();
    let max_diff = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff < 1e-10, "absorption changed outputs by {max_diff}");
    assert!(absorbed.param_count() < tpa.param_count());

    let counts: Vec<usize> = [1usize, 2, 4, 8]
        .iter()
        .map(|&groups| {
            TokenParallelAttention::<f64>::new(16, groups, 1, true, &mut rng)
                .unwrap()
                .param_count()
        })
        .collect();
    assert!(
        counts.windows(2).all(|w| w[1] < w[0]),
        "params must strictly decrease over groups, got {counts:?}"
    );

    eprintln!(
        "criterion 09 PASS: absorbed W_out matches within {max_diff:.1e}, params over groups \
         [1, 2, 4, 8] are {counts:?}"
    );
}

/// Reachability of the alternating patch schedule at its fixpoint: deepen
/// one full cycle at a time until the per-input reach counts stop growing.
fn patch_fixpoint(side: usize, sizes: &[usize]) -> (MixingGraph, MixingReport, usize) {
    let schedule = PatchSchedule::new(side, 3, sizes).unwrap();
    let mut depth = sizes.len();
    let mut prev: Option<Vec<usize>> = None;
    loop {
        let graph = build_mixing_graph(MixingSchedule::from_patches(&schedule, depth));
        let report = check_complete_mixing(&graph);
        if prev.as_ref() == Some(&report.per_input_reach_counts) {
            return (graph, report, depth);
        }
        assert!(depth <= 64, "patch reachability did not stabilize by depth {depth}");
        prev = Some(report.per_input_reach_counts.clone());
        depth += sizes.len();
    }
}

#[test]
fn criterion_10_patch_sizes_mix_by_lcm_blocks() {
    let coprime = PatchSchedule::new(35, 3, &[5, 7]).unwrap();
    assert!(coprime.is_coprime());
    assert_eq!(coprime.effective_mixing_block(), 35);
    let (_, report, depth) = patch_fixpoint(35, &[5, 7]);
    assert!(report.complete, "coprime 5/7 on 35 must mix all 1225 positions");

    let shared = PatchSchedule::new(48, 3, &[6, 8]).unwrap();
    assert!(!shared.is_coprime());
    assert_eq!(shared.effective_mixing_block(), 24);
    let (graph, report48, depth48) = patch_fixpoint(48, &[6, 8]);
    assert!(!report48.complete);
    assert!(!report48.missing_pairs.is_empty(), "need witness pairs");
    assert!(report48.per_input_reach_counts.iter().all(|&c| c == 24 * 24));
    let idx = |r: usize, c: usize| r * 48 + c;
    for i in 0..48 * 48 {
        let (ir, ic) = (i / 48, i % 48);
        for j in 0..48 * 48 {
            let (jr, jc) = (j / 48, j % 48);
            let same_block = ir / 24 == jr / 24 && ic / 24 == jc / 24;
            assert_eq!(graph.reaches(i, j), same_block, "i={i} j={j}");
        }
    }
    assert!(graph.reaches(idx(0, 0), idx(23, 23)));
    assert!(!graph.reaches(idx(0, 0), idx(0, 24)));
    assert!(!graph.reaches(idx(0, 0), idx(24, 0)));

    eprintln!(
        "criterion 10 PASS: 5/7 on 35 mixes completely (fixpoint depth {depth}), 6/8 on 48 \
         stays inside 24x24 blocks (fixpoint depth {depth48}, witness {:?})",
        report48.missing_pairs[0]
    );
}

#[test]
fn criterion_11_butterfly_learns_parity_where_blocks_cannot() {
    memtrack::tune_allocator();
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.family = Family::ButterflyMlp;
    cfg.dataset = DatasetKind::PermutedParity;
    cfg.dims = 64;
    cfg.radix = 8;
    cfg.layers = 2;
    cfg.expansion = 8;
    cfg.batch_size = 32;
    cfg.epochs = 20;
    cfg.lr = 1e-3;
    cfg.cosine_decay = false;
    cfg.seed = 0;
    cfg.samples = 20000;
    cfg.test_samples = 2000;
    let butterfly = train::train(&cfg, &tmp.path().join("butterfly")).unwrap();

    let mut base = cfg.clone();
    base.family = Family::BlockMlp;
    base.layers = 1;
    let blocks = train::train(&base, &tmp.path().join("blocks")).unwrap();

    let bf_best = butterfly.best_test_acc;
    assert!(bf_best > 0.95, "butterfly only reached {bf_best:.3}");
    let block_worst = blocks
        .rows
        .iter()
        .map(|r| r.test_acc)
        .fold(0.0f64, f64::max);
    assert!(block_worst < 0.60, "block baseline reached {block_worst:.3}");

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "took {secs:.0}s, budget is 300s");
    eprintln!(
        "criterion 11 PASS: parity test accuracy {bf_best:.3} (butterfly, epoch {}) vs \
         {block_worst:.3} best for the block baseline, {secs:.0}s",
        butterfly.best_epoch
    );
}

#[test]
fn criterion_12_vit_families_on_an_image_corpus() {
    memtrack::tune_allocator();
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("cifar");
    std::fs::create_dir_all(&data_dir).unwrap();

    // 10k train records as five standard 2000-record batches plus a 1000
    // record test batch; labels cycle 0..10 so each class holds 1000
    let rec = 3 * 32 * 32;
    let (labels, pixels) = data::tile_class_bytes(10_000, 33);
    for b in 0..5 {
        let (lo, hi) = (b * 2000, (b + 1) * 2000);
        data::write_cifar10_batch(
            &data_dir.join(format!("data_batch_{}.bin", b + 1)),
            &labels[lo..hi],
            &pixels[lo * rec..hi * rec],
        )
        .unwrap();
    }
    let (test_labels, test_pixels) = data::tile_class_bytes(1000, 44);
    data::write_cifar10_batch(&data_dir.join("test_batch.bin"), &test_labels, &test_pixels)
        .unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.family = Family::Vit;
    cfg.dataset = DatasetKind::Cifar10;
    cfg.data_dir = Some(data_dir);
    cfg.subset_per_class = Some(1000);
    cfg.patch = 4;
    cfg.dim = 128;
    cfg.heads = 8;
    cfg.layers = 4;
    cfg.expansion = 1;
    cfg.batch_size = 64;
    cfg.epochs = 20;
    cfg.lr = 1e-3;
    cfg.cosine_decay = true;
    cfg.seed = 0;
    let dense = train::train(&cfg, &tmp.path().join("dense")).unwrap();

    let mut bf_cfg = cfg.clone();
    bf_cfg.family = Family::ButterflyVit;
    bf_cfg.radix = 8;
    let butterfly = train::train(&bf_cfg, &tmp.path().join("butterfly")).unwrap();

    assert_eq!(dense.rows.len(), 20);
    assert_eq!(butterfly.rows.len(), 20);
    let dense_acc = dense.final_row().test_acc;
    let bf_acc = butterfly.final_row().test_acc;
    assert!(
        bf_acc >= dense_acc - 0.03,
        "butterfly {bf_acc:.3} fell more than 3 points below dense {dense_acc:.3}"
    );

    // longer sequences: 16x16 patches of side 2, banded radix 16
    let mut bench_cfg = cfg.clone();
    bench_cfg.patch = 2;
    bench_cfg.radix = 16;
    bench_cfg.batch_size = 16;
    bench_cfg.bench_steps = 10;
    let rows = bench::run(&bench_cfg).unwrap();
    let dense_row = rows.iter().find(|r| r.model == "dense").unwrap();
    let bf_row = rows.iter().find(|r| r.model == "butterfly").unwrap();
    assert_eq!(dense_row.seq_len, 256);
    assert!(
        bf_row.avg_step_ms <= dense_row.avg_step_ms,
        "butterfly step {:.1}ms slower than dense {:.1}ms",
        bf_row.avg_step_ms,
        dense_row.avg_step_ms
    );

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 3600.0, "took {secs:.0}s, budget is 3600s");
    eprintln!(
        "criterion 12 PASS: test accuracy {bf_acc:.3} (butterfly) vs {dense_acc:.3} (dense) \
         after 20 epochs; at 256 tokens one step is {:.0}ms vs {:.0}ms and peak heap \
         {:.0}MB vs {:.0}MB; total {secs:.0}s",
        bf_row.avg_step_ms,
        dense_row.avg_step_ms,
        bf_row.peak_live_mb,
        dense_row.peak_live_mb
    );
}
