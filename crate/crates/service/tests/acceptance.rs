//! Acceptance report: one `[PASS]` or `[FAIL]` line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use autous_agent::assessment::{final_score, format_score, meteor, score_case, Grade, MeteorParams, Role};
use autous_agent::diagnosis::{
    build_prompt, opinion_from_prediction, parse_report, ClinicalContext, DiagnosisReport, MockBackend, CLASS_PROFILES,
};
use autous_core::ctu_net::{
    checkpoint, cross_entropy_loss, gradient_check, stack_clips, Ablation, CtuNet, ModelConfig,
};
use autous_core::nn::kernels::laplacian2d;
use autous_core::nn::Tensor;
use autous_core::train_eval::{compute_metrics, evaluate_samples, train_samples, TrainSpec};
use autous_core::video_data::{evaluate_dataset_acceptance, synth_video, LogBase, VideoSample};
use autous_service::ServiceConfig;
use axum::body::Body;
use axum::http::StatusCode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;
type Check = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let checks: [Check; 10] = [
        ("AC1", "final score from grades and METEOR", ac1),
        ("AC2", "dataset acceptance rule", ac2),
        ("AC3", "desk training and two-sample overfit", ac3),
        ("AC4", "f64 gradient check, full model and ablations", ac4),
        ("AC5", "normalized gates/probs and Laplacian on flat frames", ac5),
        ("AC6", "fast-path frames, token count, checkpoint round trip", ac6),
        ("AC7", "metrics against brute-force oracle", ac7),
        ("AC8", "METEOR reference cases", ac8),
        ("AC9", "golden prompt and report sections", ac9),
        ("AC10", "service end to end with mock model", ac10),
    ];
    let mut failed = 0;
    for (id, name, f) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {why} ({secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn grades(amateur: &[u8], expert: &[u8]) -> Vec<Grade> {
    let mut g = Vec::new();
    for (i, &s) in amateur.iter().enumerate() {
        g.push(Grade::new(format!("a{i}"), Role::Amateur, s).unwrap());
    }
    for (i, &s) in expert.iter().enumerate() {
        g.push(Grade::new(format!("e{i}"), Role::Expert, s).unwrap());
    }
    g
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (am, ex, m, want) in [(&[4u8, 5, 2][..], &[4u8, 3][..], 0.42, 3.25), (&[4, 5, 3], &[4, 3], 0.39, 3.29)] {
        let sheet = autous_agent::assessment::GradeSheet::new(grades(am, ex), m).map_err(|e| e.to_string())?;
        let s = sheet.summary().map_err(|e| e.to_string())?;
        ensure!((s.final_score - want).abs() <= 0.005, "expected {want}, got {}", s.final_score);
        ensure!(s.final_display == format_score(want), "display {} for {want}", s.final_display);
        parts.push(s.final_display);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(parts.join(", "))
}

fn ac2() -> Outcome {
    let d = evaluate_dataset_acceptance(0.80, 5, 0.4, LogBase::Natural).map_err(|e| e.to_string())?;
    ensure!(d.accepted, "0.80 rejected");
    ensure!((d.threshold - 0.3562).abs() < 1e-4, "threshold {}", d.threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.random_range(1..50usize);
        let theta = rng.random_range(0.01..1.0);
        let a = rng.random_range(0.0..1.0);
        let b = rng.random_range(a..=1.0);
        let da = evaluate_dataset_acceptance(a, n, theta, LogBase::Natural).unwrap();
        let db = evaluate_dataset_acceptance(b, n, theta, LogBase::Natural).unwrap();
        ensure!(!da.accepted || db.accepted, "accepted {a} but rejected {b} (n={n}, theta={theta})");
        let more = evaluate_dataset_acceptance(a, n + 1, theta, LogBase::Natural).unwrap();
        ensure!(more.threshold <= da.threshold, "threshold rises with class count");
        let stricter = evaluate_dataset_acceptance(a, n, theta * 0.5, LogBase::Natural).unwrap();
        ensure!(stricter.threshold >= da.threshold, "threshold falls with smaller theta");
    }
    Ok(format!("threshold {:.4}, 1000 monotonicity draws", d.threshold))
}

fn ac3() -> Outcome {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..5 {
        for k in 0..40 {
            let s = synth_video(c, 10_000 + (c * 40 + k) as u64, (8, 32, 32)).unwrap();
            if k % 5 == 4 { test.push(s) } else { train.push(s) }
        }
    }
    let spec = TrainSpec {
        learning_rate: 1e-3,
        epochs: 10,
        input_size: (32, 32),
        seed: 7,
        ..TrainSpec::default()
    };
    let start = Instant::now();
    let out = train_samples(&ModelConfig::desk().with_seed(7), &train, &spec).map_err(|e| e.to_string())?;
    let acc = evaluate_samples(&out.model, &test).map_err(|e| e.to_string())?.accuracy;
    let t_desk = start.elapsed();
    ensure!(acc >= 0.8, "test accuracy {acc}");
    ensure!(t_desk < Duration::from_secs(600), "desk training took {t_desk:?}");

    let mut config = ModelConfig::tiny().with_seed(1);
    config.num_classes = 2;
    let pair = vec![
        VideoSample { class_id: 0, ..synth_video(0, 5, (8, 16, 16)).unwrap() },
        VideoSample { class_id: 1, ..synth_video(3, 6, (8, 16, 16)).unwrap() },
    ];
    let spec = TrainSpec {
        learning_rate: 1e-3,
        batch_size: 2,
        epochs: 200,
        input_size: (16, 16),
        ..TrainSpec::default()
    };
    let start = Instant::now();
    let out = train_samples(&config, &pair, &spec).map_err(|e| e.to_string())?;
    let fit = evaluate_samples(&out.model, &pair).map_err(|e| e.to_string())?.accuracy;
    let t_fit = start.elapsed();
    ensure!(fit == 1.0, "overfit accuracy {fit}");
    ensure!(t_fit < Duration::from_secs(60), "overfit took {t_fit:?}");
    Ok(format!(
        "desk test acc {:.1}% in {:.1}s; overfit 100% in {:.1}s",
        acc * 100.0,
        t_desk.as_secs_f64(),
        t_fit.as_secs_f64()
    ))
}

fn ac4() -> Outcome {
    let mut parts = Vec::new();
    for ablation in Ablation::ALL {
        let config = ModelConfig::tiny().with_ablation(ablation).with_seed(11);
        let i = config.input;
        let clips: Vec<_> = (0..2)
            .map(|k| synth_video(k * 2, 40 + k as u64, (i.frames, i.height, i.width)).unwrap().frames)
            .collect();
        let input: Tensor<f64> = stack_clips(&clips.iter().collect::<Vec<_>>()).unwrap();
        let start = Instant::now();
        let r = gradient_check(&config, &cross_entropy_loss(vec![0, 2]), &input, 1e-3, 240).map_err(|e| e.to_string())?;
        let t = start.elapsed();
        ensure!(r.max_relative_error < 1e-4, "{}: {} at {}[{}]", ablation.name(), r.max_relative_error, r.worst_param, r.worst_index);
        ensure!(t < Duration::from_secs(30), "{} took {t:?}", ablation.name());
        parts.push(format!("{} {:.1e}", ablation.name(), r.max_relative_error));
    }
    Ok(parts.join(", "))
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for batch in 0..20 {
        let config = ModelConfig::tiny().with_seed(batch);
        let net = CtuNet::<f32>::new(config.clone()).map_err(|e| e.to_string())?;
        let i = config.input;
        let n = 50;
        let scale: f32 = rng.random_range(0.0..2.0);
        let data: Vec<f32> = (0..n * i.frames * i.height * i.width * i.channels)
            .map(|_| rng.random_range(0.0..1.0f32) * scale)
            .collect();
        let x = Tensor::from_vec(&[n, i.frames, i.height, i.width, i.channels], data);
        let p = net.predict(&x).map_err(|e| e.to_string())?;
        for r in 0..n {
            let ps: f64 = p.probs.row(r).iter().map(|&v| v as f64).sum();
            let gs: f64 = p.gates.row(r).iter().map(|&v| v as f64).sum();
            worst = worst.max((ps - 1.0).abs()).max((gs - 1.0).abs());
            checked += 1;
        }
    }
    ensure!(checked == 1000, "checked {checked}");
    ensure!(worst <= 1e-6, "max deviation {worst:e}");
    let (h, w) = (9, 7);
    for value in [0.0, 0.37, 1.0, -12.5] {
        let y = laplacian2d(&vec![value; 3 * h * w], 3, h, w);
        for p in 0..3 {
            for r in 1..h - 1 {
                for c in 1..w - 1 {
                    ensure!(y[p * h * w + r * w + c] == 0.0, "nonzero interior at ({p},{r},{c}) for {value}");
                }
            }
        }
    }
    Ok(format!("1000 inputs, max |sum-1| {worst:.1e}; Laplacian interior exactly 0"))
}

fn ac6() -> Outcome {
    let mut config = ModelConfig::desk();
    config.input.frames = 10;
    ensure!(config.fast.temporal_stride == 5, "stride {}", config.fast.temporal_stride);
    ensure!(config.fast_frames() == 2, "fast frames {}", config.fast_frames());
    let config = ModelConfig::desk().with_seed(21);
    ensure!(config.fast.patch_size == 4 && config.input.height == 32 && config.input.width == 32, "desk input changed");
    let tokens = config.num_patches() + 1;
    ensure!(tokens == 65, "tokens {tokens}");

    let dir = tempfile::tempdir().unwrap();
    let net = CtuNet::<f32>::new(config.clone()).map_err(|e| e.to_string())?;
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&net, &path).map_err(|e| e.to_string())?;
    let back = checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure!(checkpoint::to_bytes(&back) == std::fs::read(&path).unwrap(), "re-serialized bytes differ");
    for (name, t) in net.store().params() {
        let u = back.store().param(name).ok_or(format!("missing {name}"))?;
        let eq = t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(eq && t.shape() == u.shape(), "{name} differs");
    }
    let clips: Vec<_> = (0..3).map(|k| synth_video(k, 9 + k as u64, (8, 32, 32)).unwrap().frames).collect();
    let x: Tensor<f32> = stack_clips(&clips.iter().collect::<Vec<_>>()).unwrap();
    ensure!(net.predict(&x).unwrap() == back.predict(&x).unwrap(), "forward outputs differ");
    Ok("2 frames, 65 tokens, bitwise checkpoint".into())
}

fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..80);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| rng.random_range(0..6) as f64 / 5.0).collect())
            .collect();
        let m = compute_metrics(&labels, &probs, c).map_err(|e| e.to_string())?;
        let pred: Vec<usize> = probs
            .iter()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter().position(|&v| v == max).unwrap()
            })
            .collect();
        let acc = (0..n).filter(|&i| pred[i] == labels[i]).count() as f64 / n as f64;
        ensure!(m.accuracy == acc, "accuracy {} vs {acc}", m.accuracy);
        let (mut rec, mut prec) = (0.0, 0.0);
        for k in 0..c {
            let tp = (0..n).filter(|&i| labels[i] == k && pred[i] == k).count() as f64;
            let pos = (0..n).filter(|&i| labels[i] == k).count() as f64;
            let called = (0..n).filter(|&i| pred[i] == k).count() as f64;
            rec += if pos == 0.0 { 0.0 } else { tp / pos };
            prec += if called == 0.0 { 0.0 } else { tp / called };
            let (mut pairs, mut wins) = (0.0, 0.0);
            for i in (0..n).filter(|&i| labels[i] == k) {
                for j in (0..n).filter(|&j| labels[j] != k) {
                    pairs += 1.0;
                    wins += match probs[i][k].partial_cmp(&probs[j][k]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
            match (m.per_class_auc[k], pairs > 0.0) {
                (Some(a), true) => {
                    let d = (a - wins / pairs).abs();
                    worst = worst.max(d);
                    ensure!(d < 1e-12, "class {k} AUC {a} vs {}", wins / pairs);
                }
                (None, false) => {}
                (a, _) => return Err(format!("class {k} AUC definedness {a:?} with {pairs} pairs")),
            }
        }
        ensure!((m.macro_recall - rec / c as f64).abs() < 1e-12, "macro recall");
        ensure!((m.macro_precision - prec / c as f64).abs() < 1e-12, "macro precision");
    }
    Ok(format!("50 instances, max AUC diff {worst:.1e}"))
}

fn ac8() -> Outcome {
    let p = MeteorParams::default();
    let words: Vec<String> = (0..10).map(|i| format!("tok{}", (b'a' + i) as char)).collect();
    let text = words.join(" ");
    let reversed: Vec<&str> = words.iter().rev().map(String::as_str).collect();
    let other: Vec<String> = (0..10).map(|i| format!("zz{}", (b'a' + i) as char)).collect();
    let same = meteor(&text, &text, &p).map_err(|e| e.to_string())?;
    let disjoint = meteor(&other.join(" "), &text, &p).map_err(|e| e.to_string())?;
    let rev = meteor(&reversed.join(" "), &text, &p).map_err(|e| e.to_string())?;
    ensure!((same - 0.9995).abs() <= 1e-6, "identical {same}");
    ensure!(disjoint == 0.0, "disjoint {disjoint}");
    ensure!((rev - 0.5).abs() <= 1e-6, "reversed {rev}");
    Ok(format!("identical {same:.6}, disjoint {disjoint}, reversed {rev:.6}"))
}

fn ac9() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../agent/tests/fixtures");
    let read = |f: &str| std::fs::read_to_string(fixtures.join(f)).map_err(|e| format!("{f}: {e}"));
    let input: serde_json::Value = serde_json::from_str(&read("case1_input.json")?).map_err(|e| e.to_string())?;
    let names: Vec<String> = CLASS_PROFILES.iter().map(|p| p.short_name.to_string()).collect();
    let opinion = opinion_from_prediction(&[0.05, 0.8, 0.05, 0.05, 0.05], &names).map_err(|e| e.to_string())?;
    ensure!(opinion.label_text == input["label_text"], "label {}", opinion.label_text);
    let field = |k: &str| input[k].as_str().unwrap_or_default().to_string();
    let ctx = ClinicalContext::new(field("chief_complaint"), field("physical_exam"), field("additional_info"))
        .map_err(|e| e.to_string())?;
    let prompt = build_prompt(&opinion, &ctx);
    let golden = std::fs::read(fixtures.join("case1_prompt.golden")).map_err(|e| e.to_string())?;
    ensure!(prompt.as_bytes() == golden.as_slice(), "prompt differs from golden ({} vs {} bytes)", prompt.len(), golden.len());
    let s = parse_report(&read("case1_response.txt")?).map_err(|e| e.to_string())?;
    let lens = [s.preliminary_diagnosis.len(), s.justification.len(), s.follow_up.len()];
    ensure!(lens.iter().all(|&l| l > 0), "empty section {lens:?}");
    Ok(format!("{} prompt bytes identical; section lengths {lens:?}", golden.len()))
}

const REFERENCE: &str = "Suspicious breast mass. Irregular margins. Core needle biopsy is recommended.";

fn ac10() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (id, summary) = rt.block_on(async {
        let (app, _) = common::app_with(&ServiceConfig::new(dir.path()), Arc::new(MockBackend::canned()));
        let id = common::create(&app).await;
        let (s, _) = common::post_empty(&app, &format!("/api/cases/{id}/report")).await;
        ensure!(s == StatusCode::CONFLICT, "report before classify gave {s}");
        let (s, _) = common::call(&app, "POST", &format!("/api/cases/{id}/video"), Body::from(common::clip_bytes(1, 5)), &[]).await;
        ensure!(s == StatusCode::OK, "upload {s}");
        let (s, v) = common::post_empty(&app, &format!("/api/cases/{id}/classify")).await;
        ensure!(s == StatusCode::OK && v["probs"].as_array().map(Vec::len) == Some(5), "classify {s} {v}");
        let (s, _) = common::call(&app, "POST", &format!("/api/cases/{id}/video"), Body::from(common::clip_bytes(1, 5)), &[]).await;
        ensure!(s == StatusCode::CONFLICT, "second upload gave {s}");
        let (s, _) = common::post_empty(&app, &format!("/api/cases/{id}/report")).await;
        ensure!(s == StatusCode::OK, "report {s}");
        for (rater, role, score) in [("a1", "amateur", 4), ("a2", "amateur", 3), ("e1", "expert", 4)] {
            let (s, v) = common::post_json(&app, &format!("/api/cases/{id}/grades"), json!({"rater_id": rater, "role": role, "score": score})).await;
            ensure!(s == StatusCode::OK, "grade {s} {v}");
        }
        let (s, v) = common::post_json(&app, &format!("/api/cases/{id}/score"), json!({"reference_text": REFERENCE})).await;
        ensure!(s == StatusCode::OK, "score {s} {v}");
        let (s, _) = common::post_json(&app, &format!("/api/cases/{id}/grades"), json!({"rater_id": "late", "role": "expert", "score": 1})).await;
        ensure!(s == StatusCode::CONFLICT, "grade after score gave {s}");
        Ok::<_, String>((id, v))
    })?;

    let stored = rt.block_on(async {
        let (app, _) = common::app_with(&ServiceConfig::new(dir.path()), Arc::new(MockBackend::canned()));
        let (_, list) = common::get(&app, "/api/cases").await;
        ensure!(list["total"] == 1, "after restart: {list}");
        let (s, v) = common::get(&app, &format!("/api/cases/{id}")).await;
        ensure!(s == StatusCode::OK && v["status"] == "scored", "after restart: {s} {}", v["status"]);
        Ok::<_, String>(v)
    })?;
    let report: DiagnosisReport = serde_json::from_value(stored["report"].clone()).map_err(|e| e.to_string())?;
    let grades: Vec<Grade> = serde_json::from_value(stored["grades"].clone()).map_err(|e| e.to_string())?;
    let scored = score_case(&report, REFERENCE, &grades, &MeteorParams::default()).map_err(|e| e.to_string())?;
    let m = meteor(&report.scoring_text(), REFERENCE, &MeteorParams::default()).map_err(|e| e.to_string())?;
    let expected = final_score(3.5, 4.0, m).map_err(|e| e.to_string())?;
    let server = summary["final"].as_f64().unwrap_or(f64::NAN);
    ensure!((server - expected).abs() < 1e-12, "server final {server} vs formula {expected}");
    ensure!((scored.summary.final_score - server).abs() < 1e-12, "stored inputs rescore to {}", scored.summary.final_score);

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let crates: Vec<String> = std::fs::read_dir(root.join("crates"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    let stray = ["package.json", "tsconfig.json", "console", "case_console", "web"]
        .iter()
        .filter(|f| root.join(f).exists() || crates.iter().any(|c| c == *f))
        .collect::<Vec<_>>();
    ensure!(stray.is_empty(), "frontend artifacts present: {stray:?}");
    Ok(format!("final {} equals formula; 409s; restart kept 1 case; crates {crates:?}", format_score(server)))
}
