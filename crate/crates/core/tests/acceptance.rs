//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod support;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hashguard::bch::{BchCode, CodePreset};
use hashguard::eval::{AttackReport, EnrollmentMode, VARIANT_DECODER, VARIANT_NND, VARIANT_RAW};
use hashguard::hashnet::{loss_classification, loss_entropy, loss_quantization};
use hashguard::nnd::{hard_decision, NndModel};
use hashguard::pipeline::{self as pl, FullEvalReport, PathsConfig, RunConfig};
use hashguard::protocol::hash_template;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradients::{joint_max_error, nnd_max_error, stage1_max_error};
use support::{avalanche_mean, code_from_bytes, code_renderings, dense_parity_check, reference_bp, SHA3_512_VECTORS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// One full default-config replay kept alive for the criteria that read it.
struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: RunConfig,
    eval: FullEvalReport,
    attack: AttackReport,
    elapsed: Duration,
    models_before_enroll: BTreeMap<PathBuf, Vec<u8>>,
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn replay() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = RunConfig { paths: PathsConfig::under(&root), ..RunConfig::default() };
    let start = Instant::now();
    pl::cmd_synth(&cfg).unwrap();
    pl::cmd_train_dh(&cfg).unwrap();
    pl::cmd_gen_gt(&cfg).unwrap();
    pl::cmd_train_nnd(&cfg).unwrap();
    pl::cmd_finetune(&cfg).unwrap();
    let models_before_enroll = files_under(&cfg.paths.model_dir);
    pl::cmd_enroll(&cfg, None, true).unwrap();
    let eval = pl::cmd_eval(&cfg).unwrap();
    let attack = pl::cmd_attack(&cfg).unwrap();
    Run { _dir: dir, root, cfg, eval, attack, elapsed: start.elapsed(), models_before_enroll }
}

fn shared_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(replay)
}

fn bch_exhaustive() -> Outcome {
    let start = Instant::now();
    let code = BchCode::new(4, 2).unwrap();
    let n = code.n();
    let mut patterns = vec![vec![false; n]];
    for i in 0..n {
        let mut e = vec![false; n];
        e[i] = true;
        patterns.push(e.clone());
        for j in i + 1..n {
            let mut e2 = e.clone();
            e2[j] = true;
            patterns.push(e2);
        }
    }
    let mut cases = 0;
    let mut failures = 0;
    for m in 0u32..1 << code.k() {
        let msg: Vec<bool> = (0..code.k()).map(|b| (m >> b) & 1 == 1).collect();
        let cw = code.encode(&msg).unwrap();
        for e in &patterns {
            let word: Vec<bool> = cw.bits().iter().zip(e).map(|(a, b)| a ^ b).collect();
            cases += 1;
            if code.decode(&word).unwrap().message != msg {
                failures += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        patterns.len() == 121 && cases == 15_488 && failures == 0 && t < Duration::from_secs(60),
        format!("{cases} cases, {failures} failures, {} patterns, {t:.2?}", patterns.len()),
    )
}

/// Rank over GF(2) by dense elimination, independent of the library.
fn gf2_rank(mut rows: Vec<Vec<u8>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c] == 1) else { continue };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[c] == 1 {
                row.iter_mut().zip(&pivot).for_each(|(a, b)| *a ^= b);
            }
        }
        rank += 1;
    }
    rank
}

fn paper_codes() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (preset, want) in [(CodePreset::Bch255_187, (255, 187)), (CodePreset::Bch1023_933, (1023, 933))] {
        let start = Instant::now();
        let code = preset.build().unwrap();
        let build = start.elapsed();
        let h = dense_parity_check(&code);
        let rank = gf2_rank(h.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(want.0 as u64);
        let msg: Vec<bool> = (0..code.k()).map(|_| rng.random()).collect();
        let cw = code.encode(&msg).unwrap();
        let in_kernel = h.iter().all(|row| row.iter().zip(cw.bits()).filter(|(&a, &b)| a == 1 && b).count() % 2 == 0);
        let deg = code.generator().degree();
        let t = start.elapsed();
        let good = (code.n(), code.k()) == want
            && deg == Some(want.0 - want.1)
            && h.len() == want.0 - want.1
            && rank == want.0 - want.1
            && in_kernel
            && t < Duration::from_secs(30);
        ok &= good;
        notes.push(format!("({},{}) deg {:?} rank {rank} build {build:.2?} total {t:.2?}", code.n(), code.k(), deg));
    }
    outcome(ok, notes.join("; "))
}

fn weights_one_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe1f);
    let mut worst: f64 = 0.0;
    let mut mismatched = 0;
    for preset in [CodePreset::Bch15_7, CodePreset::Bch63_45] {
        let code = preset.build().unwrap();
        let h = dense_parity_check(&code);
        let model = NndModel::for_code(&code, 5, 15.0).unwrap();
        for _ in 0..100 {
            let llr: Vec<f64> = (0..code.n()).map(|_| rng.random_range(-8.0..8.0)).collect();
            let ours = model.forward(&llr).unwrap();
            let theirs = reference_bp(&h, &llr, 5);
            worst = ours.iter().zip(&theirs).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            if hard_decision(&ours) != hard_decision(&theirs) {
                mismatched += 1;
            }
        }
    }
    outcome(worst <= 1e-9 && mismatched == 0, format!("max |diff| {worst:.2e}, {mismatched} hard-decision mismatches over 200 inputs"))
}

fn gradient_checks() -> Outcome {
    let (a, b, c) = (stage1_max_error(20, 11), nnd_max_error(20, 12), joint_max_error(20, 13));
    outcome(
        a <= 1e-4 && b <= 1e-4 && c <= 1e-4,
        format!("max relative error over 20 instances each: stage 1 {a:.2e}, decoder {b:.2e}, joint {c:.2e}"),
    )
}

fn loss_fixtures() -> Outcome {
    let half = Array2::from_elem((1, 8), 0.5);
    let binarized = array![[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]];
    let ones = Array2::from_elem((1, 8), 1.0);
    let mut errs = vec![
        loss_quantization(half.view()).abs(),
        (loss_quantization(binarized.view()) + 0.25).abs(),
        loss_entropy(binarized.view()).abs(),
        (loss_entropy(ones.view()) - 0.25).abs(),
    ];
    for m in [2usize, 3, 14, 100] {
        let uniform = Array2::from_elem((3, m), 1.0 / m as f64);
        errs.push((loss_classification(uniform.view(), &[0, m - 1, m / 2], 0.0, 0.0) - (m as f64).ln()).abs());
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max fixture error {worst:.2e}"))
}

fn entropy_balance() -> Outcome {
    let run = shared_run();
    let dataset = pl::load_dataset(&run.cfg).unwrap();
    let dh = pl::load_dh(&run.cfg).unwrap();
    let means = pl::hash_bit_means(&dh, &pl::stage1_batch(&dataset).unwrap()).unwrap();
    let balanced = means.iter().filter(|m| (0.4..=0.6).contains(*m)).count();
    let frac = balanced as f64 / means.len() as f64;
    outcome(
        frac >= 0.9 && run.cfg.hashnet.loss_weights.gamma == 0.25,
        format!("{balanced}/{} bits with mean in [0.4, 0.6] ({:.1}%)", means.len(), 100.0 * frac),
    )
}

fn variant_ordering() -> Outcome {
    let run = shared_run();
    let eer = |v| run.eval.variant_eer(v).unwrap();
    let (raw, dec, nnd) = (eer(VARIANT_RAW), eer(VARIANT_DECODER), eer(VARIANT_NND));
    outcome(
        raw > dec && dec >= nnd && nnd <= 0.5 * raw && run.elapsed < Duration::from_secs(15 * 60) && run.eval.code == "bch(63,45,t=3)",
        format!("EER DH- {raw:.4}, DH+Decoder {dec:.4}, DH+NND {nnd:.4}; pipeline {:.1?}", run.elapsed),
    )
}

fn enrollment_ordering() -> Outcome {
    let run = shared_run();
    let eer = |m| run.eval.mode(m).unwrap().eer;
    let (multi, one, zero) = (eer(EnrollmentMode::MultiShot), eer(EnrollmentMode::OneShot), eer(EnrollmentMode::ZeroShot));
    let frozen = files_under(&run.cfg.paths.model_dir) == run.models_before_enroll;
    let dataset = pl::load_dataset(&run.cfg).unwrap();
    let s = &dataset.splits;
    let unseen = s.zero_shot_test.iter().all(|i| !s.dh_train.contains(i) && !s.nnd_train.contains(i));
    outcome(
        multi < one && one < zero && frozen && unseen,
        format!("EER multi-shot {multi:.4}, one-shot {one:.4}, zero-shot {zero:.4}; models unchanged by enrollment/eval: {frozen}"),
    )
}

fn protocol_security() -> Outcome {
    let run = shared_run();
    let vectors = SHA3_512_VECTORS.iter().all(|(msg, hex)| hash_template(&code_from_bytes(msg), None).to_hex() == *hex);
    let avalanche = avalanche_mean(63, 1000, 0xa7a1);

    let dataset = pl::load_dataset(&run.cfg).unwrap();
    let joint = pl::load_joint(&run.cfg).unwrap();
    let plan = hashguard::eval::enrollment_plan(&dataset, run.cfg.protocol.enroll_mode, &run.cfg.eval);
    let mut needles = Vec::new();
    for (_, samples) in &plan {
        for x in samples {
            needles.extend(code_renderings(&joint.final_code(x.view()).unwrap()));
            needles.extend(code_renderings(&joint.dh.intermediate_code(x.view()).unwrap()));
        }
    }
    let artifacts = files_under(&run.root);
    let leaks: usize = artifacts
        .values()
        .map(|bytes| {
            let text = String::from_utf8_lossy(bytes);
            needles.iter().filter(|n| text.contains(n.as_str())).count()
        })
        .sum();
    let nonzero = run.attack.nonzero_scores;
    outcome(
        vectors && (200.0..=312.0).contains(&avalanche) && leaks == 0 && nonzero == 0 && run.attack.attempts > 0,
        format!(
            "FIPS-202 vectors {vectors}; avalanche mean {avalanche:.1}/512; {leaks} plaintext hits in {} files for {} enrolled subjects; attack {nonzero}/{} nonzero",
            artifacts.len(),
            plan.len(),
            run.attack.attempts
        ),
    )
}

fn determinism() -> Outcome {
    let first = shared_run();
    let second = replay();
    let a = files_under(&first.root);
    let b = files_under(&second.root);
    let differing: Vec<String> =
        a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).map(|k| k.display().to_string()).collect();
    outcome(differing.is_empty() && !a.is_empty(), format!("{} artifacts compared, differing: {differing:?}", a.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("BCH(15,7) exhaustive decoding", bch_exhaustive),
        ("BCH(255,187) and BCH(1023,933) construction", paper_codes),
        ("unit-weight decoder equals reference BP", weights_one_reduction),
        ("gradients match finite differences", gradient_checks),
        ("loss fixtures", loss_fixtures),
        ("entropy term balances hash bits", entropy_balance),
        ("variant EER ordering", variant_ordering),
        ("enrollment mode EER ordering", enrollment_ordering),
        ("template protection invariants", protocol_security),
        ("byte-identical replays", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !result.pass {
            failed += 1;
        }
        println!("criterion {:>2} {} {name}: {}", i + 1, if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
