//! One PASS/FAIL line per acceptance criterion. Criteria 1-4 need the
//! MovieLens-1M files (`ratings.dat`, `users.dat`, `movies.dat`) in the
//! directory named by `CADC_ML1M_DIR`; without it they fail.

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cadc::config::{Method, RunConfig};
use cadc::dataset::{sample_negatives, sample_uniform, FeatureSchema, Interaction, InteractionDataset};
use cadc::embedding_file::{decode, encode, EmbeddingFileError};
use cadc::eval::{hr_at_k, ndcg_at_k, rank_of_target, MetricsReport};
use cadc::mf::{mf_loss_and_grads, train_mf, MfConfig, MfModel, PretrainedEmbeddings};
use cadc::nn::{AdamConfig, Matrix};
use cadc::pipeline::{cmd_pipeline, sweep_on, table1_on, Experiment};
use cadc::synthetic::{generate, write_movielens, SyntheticConfig};
use cadc::ttnn::{
    build_ttnn, train_ttnn, ttnn_loss_and_grads, IntegrationStrategy, StrategyKind, TtnnConfig, TtnnModel,
    TtnnTrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- ML-1M

struct Ml1m {
    cadc_seconds: f64,
    table1: Vec<MetricsReport>,
    hybrid: MetricsReport,
    init: MetricsReport,
    sweep: Vec<(f64, MetricsReport)>,
}

fn ml1m_config(dir: &str, out: &std::path::Path) -> RunConfig {
    let dir = PathBuf::from(dir);
    RunConfig {
        ratings: dir.join("ratings.dat"),
        users: Some(dir.join("users.dat")),
        items: Some(dir.join("movies.dat")),
        schema: FeatureSchema::Movielens,
        dataset_name: "ml-1m".into(),
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn run_ml1m() -> Result<Ml1m, String> {
    let dir = std::env::var("CADC_ML1M_DIR")
        .map_err(|_| "ML-1M not available: set CADC_ML1M_DIR to a directory with ratings.dat".to_string())?;
    let out = TempDir::new().map_err(|e| e.to_string())?;
    let config = ml1m_config(&dir, out.path());
    let start = Instant::now();
    let exp = Experiment::load(&config).map_err(|e| e.to_string())?;
    exp.run(Method::Cadc, 0.1, StrategyKind::InitFrz).map_err(|e| e.to_string())?;
    let cadc_seconds = start.elapsed().as_secs_f64();
    let table1 = table1_on(&exp).map_err(|e| e.to_string())?;
    let run = |kind| exp.run(Method::Cadc, 0.1, kind).map(|o| o.report).map_err(|e| e.to_string());
    let hybrid = run(StrategyKind::Hybrid)?;
    let init = run(StrategyKind::Init)?;
    let sweep = sweep_on(&exp, &[1.0, 10.0, 50.0])
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| (r.ratio, r.report))
        .collect();
    Ok(Ml1m {
        cadc_seconds,
        table1,
        hybrid,
        init,
        sweep,
    })
}

fn report(runs: &Ml1m, method: Method) -> &MetricsReport {
    runs.table1.iter().find(|r| r.method == method.as_str()).expect("table1 runs every method")
}

fn criterion_1(ml: &Result<Ml1m, String>) -> Verdict {
    let ml = ml.as_ref().map_err(Clone::clone)?;
    let r = report(ml, Method::Cadc);
    let limit = Duration::from_secs(30 * 60).as_secs_f64();
    check(
        (5.5..=7.6).contains(&r.hr_at_10) && (2.6..=3.6).contains(&r.ndcg_at_10) && ml.cadc_seconds < limit,
        format!("HR@10 {:.2}, NDCG@10 {:.2}, {:.0}s", r.hr_at_10, r.ndcg_at_10, ml.cadc_seconds),
    )
}

fn criterion_2(ml: &Result<Ml1m, String>) -> Verdict {
    let ml = ml.as_ref().map_err(Clone::clone)?;
    let order = [Method::Cadc, Method::CadcMlp, Method::Logq, Method::Random, Method::Under, Method::Over];
    let hr: Vec<f64> = order.iter().map(|&m| report(ml, m).hr_at_10).collect();
    let gold = report(ml, Method::GoldStandard).hr_at_10;
    let detail = order
        .iter()
        .zip(&hr)
        .map(|(m, h)| format!("{m} {h:.2}"))
        .collect::<Vec<_>>()
        .join(" > ");
    check(
        hr.windows(2).all(|w| w[0] > w[1]) && gold > hr[0],
        format!("{detail}; gold-standard {gold:.2}"),
    )
}

fn criterion_3(ml: &Result<Ml1m, String>) -> Verdict {
    let ml = ml.as_ref().map_err(Clone::clone)?;
    let frz = report(ml, Method::Cadc);
    check(
        frz.ndcg_at_10 > ml.hybrid.ndcg_at_10 && frz.ndcg_at_10 > ml.init.ndcg_at_10 && ml.init.hr_at_10 > ml.hybrid.hr_at_10,
        format!(
            "NDCG@10 init-frz {:.2}, hybrid {:.2}, init {:.2}; HR@10 init {:.2}, hybrid {:.2}",
            frz.ndcg_at_10, ml.hybrid.ndcg_at_10, ml.init.ndcg_at_10, ml.init.hr_at_10, ml.hybrid.hr_at_10
        ),
    )
}

fn criterion_4(ml: &Result<Ml1m, String>) -> Verdict {
    let ml = ml.as_ref().map_err(Clone::clone)?;
    let hr: Vec<f64> = ml.sweep.iter().map(|(_, r)| r.hr_at_10).collect();
    let random = report(ml, Method::Random).hr_at_10;
    check(
        hr.windows(2).all(|w| w[0] >= w[1]) && hr[hr.len() - 1] > random,
        format!("HR@10 at ratios 1/10/50: {hr:.2?}; random at 10: {random:.2}"),
    )
}

// ------------------------------------------------------- gradient suites

const H: f64 = 1e-6;

fn rel_ok(a: f64, n: f64) -> bool {
    (a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-7
}

fn mf_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (nu, ni, d) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..6));
    let user = Matrix::<f64>::normal(nu, d, 0.5, rng);
    let item = Matrix::<f64>::normal(ni, d, 0.5, rng);
    let model = MfModel::from_parts(user, item, rng.random_range(-0.5..0.5)).map_err(|e| e.to_string())?;
    let ex: Vec<(u32, u32, f64)> = (0..rng.random_range(1..8))
        .map(|_| (rng.random_range(0..nu as u32), rng.random_range(0..ni as u32), f64::from(rng.random_range(0..2u8))))
        .collect();
    let (_, grads) = mf_loss_and_grads(&model, &ex);
    let loss = |m: &MfModel<f64>| mf_loss_and_grads::<f64>(m, &ex).0;
    for table in 0..2 {
        let analytic = if table == 0 { &grads.user } else { &grads.item };
        for k in 0..analytic.as_slice().len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let t = if table == 0 { &mut m.user_table } else { &mut m.item_table };
                t.as_mut_slice()[k] += delta;
                loss(&m)
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            if !rel_ok(analytic.as_slice()[k], numeric) {
                return Err(format!("mf table {table} entry {k}: {} vs {numeric}", analytic.as_slice()[k]));
            }
        }
    }
    let mut p = model.clone();
    p.global_bias += H;
    let mut m = model.clone();
    m.global_bias -= H;
    let numeric = (loss(&p) - loss(&m)) / (2.0 * H);
    if !rel_ok(grads.global_bias, numeric) {
        return Err(format!("mf global bias: {} vs {numeric}", grads.global_bias));
    }
    Ok(())
}

/// Flattened trainable parameters of a model, in a fixed order, plus the
/// matching gradient entries.
fn flat_params(model: &mut TtnnModel<f64>) -> Vec<&mut f64> {
    let mut out = Vec::new();
    for tower in [&mut model.user, &mut model.item] {
        let width = tower.ids.width();
        let frozen = tower.ids.frozen_cols;
        out.extend(tower.ids.table.as_mut_slice().iter_mut().enumerate().filter(|(k, _)| k % width >= frozen).map(|(_, v)| v));
        for l in tower.adapter.iter_mut().flat_map(|a| a.layers.iter_mut()).chain(tower.mlp.layers.iter_mut()) {
            out.extend(l.weight.as_mut_slice().iter_mut());
            out.extend(l.bias.iter_mut());
        }
    }
    out
}

fn flat_grads(model: &TtnnModel<f64>, grads: &cadc::ttnn::TtnnGrads<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for (tower, g) in [(&model.user, &grads.user), (&model.item, &grads.item)] {
        let width = tower.ids.width();
        let frozen = tower.ids.frozen_cols;
        out.extend(g.ids.as_slice().iter().enumerate().filter(|(k, _)| k % width >= frozen).map(|(_, v)| *v));
        for l in g.adapter.iter().flat_map(|a| a.layers.iter()).chain(g.mlp.layers.iter()) {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }
    out
}

fn ttnn_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (nu, ni) = (rng.random_range(1..4u32), rng.random_range(1..4u32));
    let width = rng.random_range(3..6);
    let ex: Vec<(u32, u32, f64)> = (0..rng.random_range(1..6))
        .map(|_| (rng.random_range(0..nu), rng.random_range(0..ni), f64::from(rng.random_range(0..2u8))))
        .collect();
    let rows = ex.iter().map(|&(u, i, _)| Interaction::positive(u, i, 0)).collect();
    let mut ds = InteractionDataset::from_interactions(rows, nu as usize, ni as usize).map_err(|e| e.to_string())?;
    if rng.random_bool(0.5) {
        let uf = (0..nu * 2).map(|_| f32::from(rng.random_range(0..2u8))).collect();
        let itf = (0..ni * 3).map(|_| f32::from(rng.random_range(0..2u8))).collect();
        ds = ds
            .with_features(
                cadc::dataset::FeatureTable::from_vec(nu as usize, 2, uf).map_err(|e| e.to_string())?,
                cadc::dataset::FeatureTable::from_vec(ni as usize, 3, itf).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
    }
    let kind = StrategyKind::ALL[rng.random_range(0..StrategyKind::ALL.len())];
    let strategy = if kind.needs_pretrained() {
        IntegrationStrategy::pretrained(
            kind,
            PretrainedEmbeddings {
                user: Matrix::normal(nu as usize, width, 0.5, rng),
                item: Matrix::normal(ni as usize, width, 0.5, rng),
            },
        )
    } else {
        IntegrationStrategy::random()
    };
    let config = TtnnConfig {
        tower_hidden: vec![rng.random_range(2..5)],
        emb_dim: width,
        seed: rng.random(),
    };
    let model = build_ttnn::<f64>(&ds, strategy, &config).map_err(|e| e.to_string())?;
    let q: Option<Vec<f64>> = rng.random_bool(0.5).then(|| {
        let raw: Vec<f64> = (0..ni).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    });
    let loss = |m: &TtnnModel<f64>| ttnn_loss_and_grads(m, &ex, q.as_deref()).map(|r| r.0).map_err(|e| e.to_string());
    let (_, grads) = ttnn_loss_and_grads(&model, &ex, q.as_deref()).map_err(|e| e.to_string())?;
    let analytic = flat_grads(&model, &grads);
    for (k, &a) in analytic.iter().enumerate() {
        let eval = |delta: f64| {
            let mut m = model.clone();
            *flat_params(&mut m).into_iter().nth(k).expect("same layout") += delta;
            loss(&m)
        };
        let numeric = (eval(H)? - eval(-H)?) / (2.0 * H);
        if !rel_ok(a, numeric) {
            return Err(format!("ttnn {kind} parameter {k}: {a} vs {numeric}"));
        }
    }
    Ok(())
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100;
    for i in 0..n {
        mf_instance(&mut rng).map_err(|e| format!("instance {i}: {e}"))?;
        ttnn_instance(&mut rng).map_err(|e| format!("instance {i}: {e}"))?;
    }
    Ok(format!("{n} MF and {n} TTNN instances within 1e-3 relative error"))
}

// ------------------------------------------------------- freeze contract

fn criterion_6() -> Verdict {
    let ds = generate(&SyntheticConfig {
        n_users: 50,
        n_items: 50,
        ..SyntheticConfig::default()
    });
    let mf = train_mf(
        ds.interactions(),
        &ds,
        &MfConfig {
            epochs: 5,
            batch_size: 128,
            ..MfConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let tables = mf.model.export_embeddings();
    let train = TtnnTrainConfig {
        epochs: 5,
        batch_size: 128,
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        ..TtnnTrainConfig::default()
    };
    let mut details = Vec::new();
    for kind in [StrategyKind::InitFrz, StrategyKind::Hybrid] {
        let mut model = build_ttnn(&ds, IntegrationStrategy::pretrained(kind, tables.clone()), &TtnnConfig::default())
            .map_err(|e| e.to_string())?;
        let before = model.clone();
        train_ttnn(&mut model, ds.interactions(), &ds, &train).map_err(|e| e.to_string())?;
        let frozen = kind.frozen_columns(model.user.ids.width());
        for (after, start) in [(&model.user, &before.user), (&model.item, &before.item)] {
            for r in 0..start.ids.table.rows() {
                let same = after.ids.table.row(r)[..frozen]
                    .iter()
                    .zip(&start.ids.table.row(r)[..frozen])
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(format!("{kind}: frozen id columns of row {r} changed"));
                }
            }
            if after.mlp == start.mlp {
                return Err(format!("{kind}: towers did not train"));
            }
        }
        details.push(format!("{kind} ({frozen} frozen columns)"));
    }
    Ok(format!("{} unchanged after 5 epochs", details.join(", ")))
}

// --------------------------------------------------------- metric oracles

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tables = 1000;
    let mut ranks = Vec::new();
    let mut oracle_hits = 0.0;
    let mut oracle_gain = 0.0;
    for t in 0..tables {
        let n = rng.random_range(1..=20usize);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4..=4i8)) * 0.25).collect();
        let target = rng.random_range(0..n as u32);
        let excl: HashSet<u32> = (0..n as u32).filter(|&i| i != target && rng.random_bool(0.3)).collect();
        let mut order: Vec<u32> = (0..n as u32).filter(|i| *i == target || !excl.contains(i)).collect();
        order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
        let oracle = order.iter().position(|&i| i == target).expect("target kept") + 1;
        let scorer = |_: u32, i: u32| scores[i as usize];
        let rank = rank_of_target(&scorer, 0, target, n, &excl).map_err(|e| e.to_string())?;
        if rank != oracle {
            return Err(format!("table {t}: rank {rank}, oracle {oracle}"));
        }
        ranks.push(rank);
        if oracle <= 10 {
            oracle_hits += 1.0;
            oracle_gain += 1.0 / ((oracle + 1) as f64).log2();
        }
    }
    let hr = hr_at_k(&ranks, 10).map_err(|e| e.to_string())?;
    let ndcg = ndcg_at_k(&ranks, 10).map_err(|e| e.to_string())?;
    let (ohr, ondcg) = (100.0 * oracle_hits / tables as f64, 100.0 * oracle_gain / tables as f64);
    check(
        (hr - ohr).abs() < 1e-9 && (ndcg - ondcg).abs() < 1e-9,
        format!("{tables} tables; HR@10 {hr:.3} / oracle {ohr:.3}, NDCG@10 {ndcg:.3} / oracle {ondcg:.3}"),
    )
}

// ------------------------------------------------------------ determinism

fn untimed_csv(text: &str) -> String {
    text.lines()
        .map(|l| l.split(',').take(6).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_8() -> Verdict {
    let data = TempDir::new().map_err(|e| e.to_string())?;
    let ds = generate(&SyntheticConfig {
        n_users: 120,
        n_items: 90,
        ..SyntheticConfig::default()
    });
    write_movielens(&ds, data.path()).map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for _ in 0..2 {
        let out = TempDir::new().map_err(|e| e.to_string())?;
        let config = RunConfig {
            ratings: data.path().join("ratings.dat"),
            users: Some(data.path().join("users.dat")),
            items: Some(data.path().join("movies.dat")),
            schema: FeatureSchema::Movielens,
            epochs: 5,
            pretrain_epochs: 5,
            batch_size: 256,
            out: out.path().to_path_buf(),
            ..RunConfig::default()
        };
        cmd_pipeline(&config).map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(out.path().join("metrics.csv")).map_err(|e| e.to_string())?;
        csvs.push(untimed_csv(&text));
    }
    check(csvs[0] == csvs[1], format!("metrics without timing: {}", csvs[0].lines().nth(1).unwrap_or("")))
}

// --------------------------------------------------------------- sampling

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let n = rng.random_range(0..2000usize);
        let ratio = rng.random_range(0.001..=1.0);
        let train: Vec<Interaction> = (0..n as u32).map(|i| Interaction::positive(i % 13, i % 17, i as i64)).collect();
        let sample = sample_uniform(&train, ratio, rng.random()).map_err(|e| e.to_string())?;
        let want = (ratio * n as f64 + 1e-9).floor() as usize;
        if sample.len() != want {
            return Err(format!("n {n} ratio {ratio}: {} rows, expected {want}", sample.len()));
        }
        if sample_uniform(&train, 1.0, rng.random()).map_err(|e| e.to_string())? != train {
            return Err("ratio 1 changed the input".into());
        }
    }
    let ds = generate(&SyntheticConfig {
        n_users: 100,
        n_items: 400,
        ..SyntheticConfig::default()
    });
    let positives: HashSet<(u32, u32)> = ds.interactions().iter().map(|i| (i.user, i.item)).collect();
    let k = 10_000usize.div_ceil(ds.interactions().len());
    let neg = sample_negatives(ds.interactions(), &ds, k, 3).map_err(|e| e.to_string())?;
    let hits = neg.pairs.iter().filter(|p| positives.contains(p)).count();
    check(
        neg.len() >= 10_000 && hits == 0,
        format!("200 uniform samples exact; {} negative draws, {hits} positives drawn", neg.len()),
    )
}

// --------------------------------------------------------- embedding file

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for t in 0..200 {
        let (rows, cols) = (rng.random_range(0..30usize), rng.random_range(0..30usize));
        let data: Vec<f32> = (0..rows * cols).map(|_| f32::from_bits(rng.random())).collect();
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
        let mut bytes = encode(&m).map_err(|e| e.to_string())?;
        let back = decode(&bytes).map_err(|e| e.to_string())?;
        if back.shape() != m.shape() || !back.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            return Err(format!("table {t} did not round-trip"));
        }
        if rows * cols > 0 {
            let at = 16 + rng.random_range(0..4 * rows * cols);
            bytes[at] ^= 1 << rng.random_range(0..8);
            if !matches!(decode(&bytes), Err(EmbeddingFileError::ChecksumMismatch { .. })) {
                return Err(format!("table {t}: flipped byte {at} not detected"));
            }
        }
    }
    Ok("200 random tables bit-exact; every payload bit flip detected".into())
}

fn main() -> ExitCode {
    let ml1m = run_ml1m();
    let criteria: [Criterion; 10] = [
        ("ML-1M cadc HR@10/NDCG@10 and wall clock", Box::new(|| criterion_1(&ml1m))),
        ("ML-1M method ordering", Box::new(|| criterion_2(&ml1m))),
        ("ML-1M integration strategies", Box::new(|| criterion_3(&ml1m))),
        ("ML-1M ratio sweep", Box::new(|| criterion_4(&ml1m))),
        ("gradient suites", Box::new(criterion_5)),
        ("freeze contract", Box::new(criterion_6)),
        ("metric oracles", Box::new(criterion_7)),
        ("determinism", Box::new(criterion_8)),
        ("sampling", Box::new(criterion_9)),
        ("embedding file", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
