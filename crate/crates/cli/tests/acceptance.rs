//! Acceptance checks. Each criterion prints one PASS/FAIL line with the
//! measured values and its runtime; the process exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chatscope_core::config::{EngineKind, OcrConfig};
use chatscope_core::evalkit;
use chatscope_core::fixture::{self, FixtureSpec};
use chatscope_core::imgproc::{self, RgbThreshold};
use chatscope_core::ingest;
use chatscope_core::llmfilter::{self, ChatRequest, EvalCounts, LlmClient, LlmConfig};
use chatscope_core::modevents::{self, SpanDetector, StrataConfig, Stratum};
use chatscope_core::ocr::{self, BenchFrame, CascadeConfig};
use chatscope_core::pipeline::{self, Project, StageOptions};
use chatscope_core::sampler::{AnnotationRecord, SamplingConfig, SaturationTracker, EVASION_TRACK};
use chatscope_core::synth;
use chatscope_core::transcript::{self, PiiRedactor, PseudonymRegistry, RawLine};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- metrics

/// Top-down memoized LCS, independent of the library's rolling-row DP.
fn lcs_memo(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn oracle_sim(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    2.0 * lcs_memo(&a, &b) as f64 / (a.len() + b.len()) as f64
}

/// Maximum cardinality one-to-one pairing over edges with similarity >= tau
/// (augmenting paths).
fn max_pairing(gt: &[String], ocr: &[String], tau: f64) -> usize {
    let adj: Vec<Vec<usize>> = gt
        .iter()
        .map(|g| (0..ocr.len()).filter(|&j| oracle_sim(g, &ocr[j]) >= tau).collect())
        .collect();
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; ocr.len()];
    (0..gt.len())
        .filter(|&i| augment(i, &adj, &mut vec![false; ocr.len()], &mut owner))
        .count()
}

fn random_string(rng: &mut ChaCha8Rng, max: usize) -> String {
    let alphabet: Vec<char> = "abcde fgh:#é".chars().collect();
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn perturb(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut v: Vec<char> = s.chars().collect();
    for _ in 0..rng.gen_range(0..4) {
        match rng.gen_range(0..3) {
            0 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v.remove(i);
            }
            1 if v.len() < 40 => {
                let i = rng.gen_range(0..=v.len());
                v.insert(i, 'x');
            }
            _ if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v[i] = 'z';
            }
            _ => {}
        }
    }
    v.into_iter().collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tau = evalkit::DEFAULT_TAU;
    let (mut sim_bad, mut align_bad, mut report_bad, mut max_gap) = (0, 0, 0, 0usize);
    for _ in 0..500 {
        let a = random_string(&mut rng, 40);
        let b = if rng.gen_bool(0.5) { perturb(&mut rng, &a) } else { random_string(&mut rng, 40) };
        if evalkit::sim(&a, &b) != oracle_sim(&a, &b) || evalkit::lcs_len(&a, &b) != lcs_memo(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>()) {
            sim_bad += 1;
        }

        let n_gt = rng.gen_range(1..=30);
        let gt: Vec<String> = (0..n_gt).map(|_| random_string(&mut rng, 40)).collect();
        let mut ocr_lines = Vec::new();
        for g in &gt {
            if rng.gen_bool(0.8) {
                ocr_lines.push(perturb(&mut rng, g));
            }
        }
        while ocr_lines.len() < 30 && rng.gen_bool(0.3) {
            ocr_lines.push(random_string(&mut rng, 40));
        }
        ocr_lines.shuffle(&mut rng);

        let pairs = evalkit::align(&gt, &ocr_lines, tau);
        let matched = pairs.iter().filter(|p| p.matched).count();
        let best = max_pairing(&gt, &ocr_lines, tau);
        let used: Vec<&String> = pairs.iter().filter_map(|p| p.ocr.as_ref()).collect();
        let distinct = used.iter().collect::<BTreeSet<_>>().len() == used.len()
            || ocr_lines.iter().collect::<BTreeSet<_>>().len() < ocr_lines.len();
        let sound = pairs.iter().all(|p| match &p.ocr {
            Some(o) => p.matched && p.sim >= tau && p.sim == oracle_sim(&p.gt, o),
            None => !p.matched,
        });
        if matched > best || !distinct || !sound {
            align_bad += 1;
        }
        max_gap = max_gap.max(best - matched.min(best));

        let r = evalkit::report(&gt, &ocr_lines, tau).unwrap();
        let ams = if matched == 0 {
            0.0
        } else {
            pairs.iter().filter(|p| p.matched).map(|p| p.sim).sum::<f64>() / matched as f64
        };
        if r.matched != matched || r.recall != matched as f64 / n_gt as f64 || (r.ams - ams).abs() > 1e-12 {
            report_bad += 1;
        }
    }
    outcome(
        sim_bad == 0 && align_bad == 0 && report_bad == 0 && max_gap <= 1,
        format!("500 instances; sim mismatches {sim_bad}, invalid alignments {align_bad}, report mismatches {report_bad}, max recall gap {max_gap} line(s)"),
    )
}

// ------------------------------------------------------------------- otsu

/// Exhaustive argmax of between-class variance straight from the pixels.
fn oracle_otsu(img: &GrayImage) -> u8 {
    let px: Vec<f64> = img.pixels().map(|p| p[0] as f64).collect();
    let n = px.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 0..=255u8 {
        let (lo, hi): (Vec<f64>, Vec<f64>) = px.iter().partition(|&&v| v <= t as f64);
        let var = if lo.is_empty() || hi.is_empty() {
            0.0
        } else {
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2)
        };
        if var > best.0 {
            best = (var, t);
        }
    }
    best.1
}

fn otsu() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for i in 0..200 {
        let img = GrayImage::from_fn(16, 16, |_, _| {
            // mix of uniform and bimodal images
            let v: u8 = if i % 2 == 0 {
                rng.gen()
            } else if rng.gen_bool(0.5) {
                rng.gen_range(20..90)
            } else {
                rng.gen_range(150..240)
            };
            image::Luma([v])
        });
        if imgproc::otsu_threshold(&img) != oracle_otsu(&img) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("200 images; {bad} mismatches"))
}

// ---------------------------------------------------------------- cascade

fn cascade_ordering() -> Outcome {
    let sessions = synth::ocr_corpus(3, 4, 40);
    let frames: Vec<BenchFrame> = sessions
        .iter()
        .flat_map(|s| s.frames.iter())
        .map(|f| BenchFrame {
            image: ingest::crop(&f.image, synth::PANEL).unwrap(),
            threshold: RgbThreshold::new(150, 150, 150),
            lines: f.lines.clone(),
        })
        .collect();
    let engine = pipeline::build_engine(&OcrConfig {
        engine: EngineKind::Glyph,
        ..OcrConfig::default()
    })
    .unwrap();
    let r = ocr::ablation(&frames, engine.as_ref(), &CascadeConfig::default(), evalkit::DEFAULT_TAU).unwrap();
    let (f, s, o) = (r.framework.recall, r.suppressed_only.recall, r.original_only.recall);
    outcome(
        f > s && s > o && f >= 0.85 && r.framework.ams >= 0.90,
        format!(
            "{} frames; recall framework {f:.4} > suppressed-only {s:.4} > original-only {o:.4}; framework AMS {:.4}",
            frames.len(),
            r.framework.ams
        ),
    )
}

// ------------------------------------------------------------ masked spans

fn masked_spans() -> Outcome {
    let c = synth::injection_corpus(4, 1000, 200, 50);
    let det = SpanDetector::default();
    let truth: BTreeSet<(usize, usize, usize)> = c.spans.iter().copied().collect();
    let mut found = BTreeSet::new();
    let mut found_tokens: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, line) in c.lines.iter().enumerate() {
        for s in det.detect(line) {
            found.insert((i, s.start, s.length));
            let tok: String = line.chars().skip(s.start).take(s.length).collect();
            found_tokens.entry(i).or_default().push(tok);
        }
    }
    let tp = found.intersection(&truth).count();
    let precision = tp as f64 / found.len().max(1) as f64;
    let recall = tp as f64 / truth.len() as f64;
    let decoys_hit = c
        .decoys
        .iter()
        .filter(|(l, d)| found_tokens.get(l).is_some_and(|t| t.contains(d)))
        .count();
    let short_hit = found.iter().filter(|s| s.2 <= 2).count();
    outcome(
        precision >= 0.95 && recall >= 0.95 && decoys_hit == 0 && short_hit == 0,
        format!(
            "P {precision:.4}, R {recall:.4} ({tp}/{} injected, {} detected); decoys accepted {decoys_hit}/{}; short spans accepted {short_hit} ({} present)",
            truth.len(),
            found.len(),
            c.decoys.len(),
            c.short_runs.len()
        ),
    )
}

// ------------------------------------------------------------ stratification

fn stratification() -> Outcome {
    let rows = [
        (11, 1.00, Stratum::High),
        (18, 0.89, Stratum::Medium),
        (12, 0.92, Stratum::High),
        (14, 0.43, Stratum::Low),
        (11, 0.91, Stratum::High),
        (18, 0.83, Stratum::Medium),
        (16, 1.00, Stratum::High),
        (15, 0.73, Stratum::Medium),
    ];
    let cfg = StrataConfig::default();
    let wrong: Vec<String> = rows
        .iter()
        .filter(|(m, r, want)| modevents::stratify(*m, *r, &cfg) != *want)
        .map(|(m, r, want)| format!("{m}/{r}→{want}"))
        .collect();
    outcome(wrong.is_empty(), format!("8 rows; wrong: {wrong:?}"))
}

// -------------------------------------------------------------- classifier

fn spawn_stub_llm(rt: &tokio::runtime::Runtime) -> String {
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(chatscope_server::serve(listener, chatscope_server::stub_llm_router()));
    format!("http://{addr}/v1/chat/completions")
}

fn classifier(rt: &tokio::runtime::Runtime, url: &str) -> Outcome {
    let convs: Vec<(String, String)> = [
        "user_00001: add me on snap",
        "user_00002: how old r u",
        "user_00003: ur such a loser",
        "user_00004: #### off",
        "user_00005: ur avatar is cute",
        "user_00006: lets trade pets",
        "user_00007: <<malformed>>",
        "user_00008: whats ur address",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| (format!("c{i}"), t.to_string()))
    .collect();
    let client = LlmClient::new(
        LlmConfig {
            url: url.to_string(),
            concurrency: 3,
            timeout_secs: 30,
            ..LlmConfig::default()
        },
        llmfilter::PROMPT_TEMPLATE.to_string(),
    )
    .unwrap();
    let first = serde_json::to_vec(&rt.block_on(client.classify_all(&convs)).unwrap()).unwrap();
    let second = serde_json::to_vec(&rt.block_on(client.classify_all(&convs)).unwrap()).unwrap();

    // in-process route: same prompt answered without HTTP, parsed locally
    let verdicts: Vec<llmfilter::ClassifierVerdict> = serde_json::from_slice(&first).unwrap();
    let mut local_agree = true;
    for ((_, text), v) in convs.iter().zip(&verdicts) {
        let prompt = llmfilter::build_prompt(llmfilter::PROMPT_TEMPLATE, text, Some(llmfilter::FEW_SHOT_BLOCK)).unwrap();
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![llmfilter::ChatMessage::new("user", &prompt)],
            temperature: 0.0,
        };
        let parsed = llmfilter::parse_decision(&llmfilter::stub_completion(&req)).ok();
        let expect = parsed.map(|(l, r)| (Some(l), Some(l.binary()), r));
        let got = v.label.map(|l| (Some(l), v.binary, v.reason.clone()));
        local_agree &= expect == got;
    }

    let counts = EvalCounts {
        tp: 3193,
        fp: 6807,
        tn: 0,
        fn_: 1277,
    };
    let m = llmfilter::metrics(counts).unwrap();
    let direct = 2.0 * 3193.0 / (2.0 * 3193.0 + 6807.0 + 1277.0);
    let f1_ok = (m.f1 - 0.4413).abs() <= 0.0002 && (m.f1 - direct).abs() < 1e-12;
    outcome(
        first == second && local_agree && f1_ok,
        format!(
            "verdict bytes identical across runs: {}; agree with in-process stub: {local_agree}; P {:.4} R {:.4} F1 {:.4}",
            first == second,
            m.precision,
            m.recall,
            m.f1
        ),
    )
}

// ------------------------------------------------------------ anonymization

fn anonymization() -> Outcome {
    let c = synth::anonymization_corpus(5, 5000, 300, 60);
    let raw: Vec<RawLine> = c
        .lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let p = transcript::parse_line(l);
            RawLine {
                session: "a".into(),
                seq: i as u64,
                frame_seq: 0,
                raw: l.clone(),
                speaker: p.speaker,
                text: p.text,
            }
        })
        .collect();
    let mut registry = PseudonymRegistry::new(0.9);
    registry.register_all(raw.iter().filter_map(|l| l.speaker.as_deref()));
    let mut redactor = PiiRedactor::default();
    let out: Vec<_> = raw
        .into_iter()
        .map(|l| transcript::anonymize_line(&mut registry, &mut redactor, l))
        .collect();

    let key = |t: &str| {
        t.trim_matches(|ch: char| !ch.is_alphanumeric() && ch != '_')
            .to_lowercase()
    };
    let forbidden: BTreeSet<String> = c
        .names
        .iter()
        .chain(c.variants.iter().map(|(v, _)| v))
        .map(|n| key(n))
        .collect();
    let leaks = out
        .iter()
        .flat_map(|l| std::iter::once(l.speaker.as_str()).chain(l.text.split_whitespace()))
        .filter(|t| forbidden.contains(&key(t)))
        .count();

    let split = c
        .variants
        .iter()
        .filter(|(v, b)| registry.resolve_raw(v) != registry.resolve_raw(b))
        .count();

    let replayed = PseudonymRegistry::replay(registry.entries(), 0.9);
    let twice = PseudonymRegistry::replay(replayed.entries(), 0.9);
    let idempotent = replayed.entries() == registry.entries() && twice.entries() == registry.entries();
    outcome(
        leaks == 0 && split == 0 && idempotent,
        format!(
            "{} lines, {} names, {} variants; raw-name tokens {leaks}; variants split from base {split}; replay idempotent {idempotent}; {} pseudonyms",
            out.len(),
            c.names.len(),
            c.variants.len(),
            registry.len()
        ),
    )
}

// --------------------------------------------------------------- saturation

/// Reference: per track, count interpretable non-novel records since the
/// last interpretable novel one.
#[derive(Default, Clone)]
struct RefTrack {
    themes: BTreeSet<String>,
    run: usize,
    stopped_at: Option<usize>,
}

fn reference(cfg: &SamplingConfig, log: &[AnnotationRecord]) -> (BTreeMap<String, RefTrack>, Vec<bool>) {
    let mut tracks: BTreeMap<String, RefTrack> = BTreeMap::new();
    let mut novelty = Vec::new();
    for (i, r) in log.iter().enumerate() {
        let window = if r.track == EVASION_TRACK { cfg.evasion_window } else { cfg.category_window };
        let t = tracks.entry(r.track.clone()).or_default();
        let novel = r.codes.iter().any(|c| !t.themes.contains(c));
        t.themes.extend(r.codes.iter().cloned());
        if r.interpretable {
            t.run = if novel { 0 } else { t.run + 1 };
        }
        if t.stopped_at.is_none() && window > 0 && t.run >= window {
            t.stopped_at = Some(i);
        }
        novelty.push(novel);
    }
    (tracks, novelty)
}

fn saturation() -> Outcome {
    let cfg = SamplingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let palette = ["age", "platform", "profanity", "leet", "fragment", "probe", "code_word"];
    let (mut replay_bad, mut ref_bad, mut stops) = (0, 0, 0);
    for _ in 0..1000 {
        let tracks = ["grooming", "bullying", EVASION_TRACK];
        let mut draws: Vec<(String, String)> = Vec::new();
        let mut live = SaturationTracker::new(cfg);
        let mut log = Vec::new();
        for k in 0..rng.gen_range(1..40) {
            let track = tracks.choose(&mut rng).unwrap().to_string();
            let target = format!("t{k}");
            live.mark_drawn(&track, &target);
            draws.push((track.clone(), target.clone()));
            let n_codes = rng.gen_range(0..3);
            let codes: BTreeSet<String> = palette[..rng.gen_range(2..=palette.len())]
                .choose_multiple(&mut rng, n_codes)
                .map(|s| s.to_string())
                .collect();
            let rec = AnnotationRecord {
                annotator: format!("a{}", rng.gen_range(0..2)),
                target,
                track,
                codes,
                novel: false,
                interpretable: rng.gen_bool(0.8),
                verdict: None,
                timestamp: None,
            };
            log.push(live.record(rec).unwrap());
        }
        let replay = SaturationTracker::replay(cfg, draws.iter().map(|(a, b)| (a.as_str(), b.as_str())), &log).unwrap();
        if replay.states() != live.states() || replay.log() != live.log() {
            replay_bad += 1;
        }

        let (ref_tracks, ref_novel) = reference(&cfg, &log);
        let novel_ok = log.iter().map(|r| r.novel).eq(ref_novel.iter().copied());
        // replay prefix by prefix to find where the live tracker first stops
        let mut first_stop: BTreeMap<String, usize> = BTreeMap::new();
        let mut probe = SaturationTracker::new(cfg);
        for (t, g) in &draws {
            probe.mark_drawn(t, g);
        }
        for (i, r) in log.iter().enumerate() {
            probe.record(r.clone()).unwrap();
            if probe.state(&r.track).saturated {
                first_stop.entry(r.track.clone()).or_insert(i);
            }
        }
        let ref_stop: BTreeMap<String, usize> = ref_tracks
            .iter()
            .filter_map(|(k, t)| t.stopped_at.map(|i| (k.clone(), i)))
            .collect();
        let themes_ok = ref_tracks
            .iter()
            .all(|(k, t)| live.states().get(k).is_some_and(|s| s.theme_set == t.themes));
        let final_ok = ref_tracks.iter().all(|(k, t)| {
            let w = cfg.window_for(k);
            live.states()[k].saturated == (w > 0 && t.run >= w)
        });
        stops += ref_stop.len();
        if !novel_ok || first_stop != ref_stop || !themes_ok || !final_ok {
            ref_bad += 1;
        }
    }
    outcome(
        replay_bad == 0 && ref_bad == 0,
        format!("1000 logs; live≠replay {replay_bad}; disagreements with reference simulator {ref_bad}; {stops} track stops observed"),
    )
}

// -------------------------------------------------------------- end to end

fn run_fixture(root: &Path, llm_url: &str) -> BTreeMap<String, BTreeMap<String, String>> {
    let spec = FixtureSpec {
        llm_url: llm_url.to_string(),
        ..FixtureSpec::default()
    };
    fixture::write_fixture(root, &spec).unwrap();
    let project = Project::open(root, None, 0).unwrap();
    project
        .run_all(StageOptions::default())
        .unwrap()
        .into_iter()
        .map(|m| (m.stage.to_string(), m.outputs))
        .collect()
}

fn e2e(url: &str) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = run_fixture(&dir.path().join("a"), url);
    let b = run_fixture(&dir.path().join("b"), url);
    let files: usize = a.values().map(|o| o.len()).sum();
    let differing: Vec<String> = a
        .iter()
        .flat_map(|(stage, outs)| {
            outs.iter()
                .filter(|(p, d)| b.get(stage).and_then(|o| o.get(*p)) != Some(*d))
                .map(|(p, _)| p.clone())
        })
        .collect();
    outcome(
        a == b && files > 0,
        format!("{} stages, {files} output files; differing digests {differing:?}", a.len()),
    )
}

// ------------------------------------------------------------------- main

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let url = spawn_stub_llm(&rt);

    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Option<Duration>, Check)> = vec![
        ("metric oracle equivalence", Some(Duration::from_secs(10)), Box::new(metric_oracles)),
        ("otsu oracle equivalence", Some(Duration::from_secs(5)), Box::new(otsu)),
        ("cascade ordering", Some(Duration::from_secs(300)), Box::new(cascade_ordering)),
        ("masked-span detector", Some(Duration::from_secs(2)), Box::new(masked_spans)),
        ("stratification rows", None, Box::new(stratification)),
        ("classifier harness", None, Box::new(|| classifier(&rt, &url))),
        ("anonymization integrity", None, Box::new(anonymization)),
        ("saturation replay", None, Box::new(saturation)),
        ("end-to-end determinism", None, Box::new(|| e2e(&url))),
    ];

    let mut failed = 0;
    for (name, limit, check) in &criteria {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took < l);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default();
        println!(
            "{} {name}: {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
