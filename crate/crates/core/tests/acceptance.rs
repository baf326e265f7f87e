//! One test per acceptance criterion. Each prints a single
//! `criterion N ...: PASS|FAIL` line (run with `--nocapture` to see them)
//! and then asserts.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use stylecav::cluster::{
    agglomerative, cohesion_stats, silhouette_from_distances, sweep_k, DistanceMatrix, Linkage, PairRelation, PointSet,
};
use stylecav::eval::{cross_cc_csv, cross_cc_matrix, roc_auc};
use stylecav::stel::{load_stel, make_or_content, or_content_accuracy, stel_accuracy};
use stylecav::synth::{planted_corpus, SynthConfig};
use stylecav::taskgen::{cav_to_av, split_authors, task_stats, write_tasks};
use stylecav::training::{train, LossKind, TrainConfig, TrainingData};
use stylecav::{rng, AvLabel, CcLevel, Corpus, EncoderModel, FeatureConfig, StyleVector};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} ({name}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn ngram_only() -> FeatureConfig {
    FeatureConfig { explicit_features: vec![], ..Default::default() }
}

fn all_authors(corpus: &Corpus) -> BTreeSet<String> {
    corpus.author_names().iter().cloned().collect()
}

#[test]
fn criterion_1_task_generation_structure() {
    let start = Instant::now();
    let s = planted_corpus(&SynthConfig { n_authors: 500, utterances_per_author: 20, ..Default::default() });
    assert_eq!(s.corpus.len(), 10_000);
    let split = split_authors(&s.corpus, [0.7, 0.15, 0.15], 0).unwrap();
    let sets = common::tasks_all_cc(&s.corpus, &split.train, 5000, 0);
    let elapsed = start.elapsed();

    let mut problems = Vec::new();
    let stats: Vec<_> = sets.iter().map(|(cc, t)| (*cc, task_stats(t, &s.corpus), t)).collect();
    for (cc, st, tasks) in &stats {
        if st.n_av != 2 * st.n_cav || cav_to_av(tasks).len() != 2 * tasks.len() {
            problems.push(format!("{cc}: #AV != 2 #CAV"));
        }
        match cc {
            CcLevel::Conversation if st.negative_same_conversation != 1.0 || st.negative_same_domain != 1.0 => problems
                .push(format!("conversation: neg co={} do={}", st.negative_same_conversation, st.negative_same_domain)),
            CcLevel::Domain if st.negative_same_domain != 1.0 => {
                problems.push(format!("domain: neg do={}", st.negative_same_domain))
            }
            _ => {}
        }
    }
    let positives = |t: &[stylecav::CavTask]| t.iter().map(|t| (t.anchor, t.positive)).collect::<Vec<_>>();
    if !sets.iter().all(|(_, t)| positives(t) == positives(&sets[0].1)) {
        problems.push("positive pairs differ across CC levels".into());
    }
    let bytes = |t: &[stylecav::CavTask]| {
        let mut b = Vec::new();
        write_tasks(&mut b, t, &s.corpus).unwrap();
        String::from_utf8(b)
            .unwrap()
            .lines()
            .map(|l| l.split('\t').take(4).skip(2).collect::<Vec<_>>().join("\t"))
            .collect::<Vec<_>>()
    };
    if !sets.iter().all(|(_, t)| bytes(t) == bytes(&sets[0].1)) {
        problems.push("serialized positive ids differ".into());
    }
    if elapsed >= Duration::from_secs(10) {
        problems.push(format!("runtime {elapsed:?}"));
    }
    let conv = &stats[0].1;
    let detail = format!(
        "3x{} tasks from 10k utterances in {:.2}s; conversation neg co={:.2} do={:.2}; domain neg do={:.2}; {}",
        conv.n_cav,
        elapsed.as_secs_f64(),
        conv.negative_same_conversation,
        conv.negative_same_domain,
        stats[1].1.negative_same_domain,
        if problems.is_empty() { "no violations".to_owned() } else { problems.join("; ") }
    );
    verdict(1, "task-generation structure", problems.is_empty(), &detail);
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for loss in [LossKind::Contrastive, LossKind::Triplet, LossKind::OnlineContrastive] {
        for hidden in [None, Some(8)] {
            let r = common::gradient_check(loss, hidden, 100, 2024);
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < common::FD_TOLERANCE && elapsed < Duration::from_secs(30);
    verdict(
        2,
        "gradient suite",
        pass,
        &format!("{checked} samples over 3 losses, max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_3_metric_oracles() {
    let mut rng = rng::stream(3, "acceptance/metrics");
    let mut auc_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..40u8)) / 39.0).collect();
        let mut labels: Vec<AvLabel> =
            (0..n).map(|_| if rng.random_bool(0.5) { AvLabel::Same } else { AvLabel::Different }).collect();
        labels[0] = AvLabel::Same;
        labels[n - 1] = AvLabel::Different;
        if roc_auc(&scores, &labels).unwrap() != common::brute_force_auc(&scores, &labels) {
            auc_mismatch += 1;
        }
    }
    let mut worst_sil: f64 = 0.0;
    for trial in 0..300 {
        let n = rng.random_range(3..=100);
        let k = rng.random_range(2..n.min(8));
        let vs: Vec<StyleVector> = (0..n)
            .map(|_| StyleVector::normalized((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let refs: Vec<&StyleVector> = vs.iter().collect();
        let d = DistanceMatrix::cosine(&refs);
        // Every cluster non-empty: the first k points seed the labels.
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let fast = silhouette_from_distances(&d, &labels, k).unwrap();
        let slow = common::brute_force_silhouette(&d, &labels);
        worst_sil = worst_sil.max((fast - slow).abs());
        assert!(fast.is_finite(), "trial {trial}");
    }
    let pass = auc_mismatch == 0 && worst_sil <= 1e-12;
    verdict(
        3,
        "metric oracles",
        pass,
        &format!("AUC mismatches {auc_mismatch}/1000; silhouette max |diff| {worst_sil:.1e} over 300 trials"),
    );
}

#[test]
fn criterion_4_chance_calibration() {
    // No style signal and no topic preference: every utterance is exchangeable.
    let s = planted_corpus(&SynthConfig {
        n_authors: 1000,
        utterances_per_author: 12,
        style_signal: false,
        home_domain_prob: 0.0,
        seed: 4,
        ..Default::default()
    });
    let authors = all_authors(&s.corpus);
    let tasks = stylecav::taskgen::generate_tasks(&s.corpus, &authors, CcLevel::Random, 10_000, 4, None).unwrap();
    let model = EncoderModel::random(FeatureConfig::default(), 64, None, 4);
    let row = cross_cc_matrix("untrained", &model, &s.corpus, &[(CcLevel::Random, tasks.tasks)]).unwrap();
    let (cav, auc) = (row.cav[0].1, row.auc[0].1);
    let pass = (cav - 0.5).abs() <= 0.02 && (auc - 0.5).abs() <= 0.02;
    verdict(4, "chance calibration", pass, &format!("10000 tasks: CAV accuracy {cav:.4}, AUC {auc:.4}"));
}

#[test]
fn criterion_5_planted_structure_learning() {
    let start = Instant::now();
    let (untrained, history) = single_threaded(|| {
        let s = planted_corpus(&SynthConfig {
            n_authors: 300,
            utterances_per_author: 16,
            habit_consistency: 1.0,
            seed: 5,
            ..Default::default()
        });
        let split = split_authors(&s.corpus, [0.7, 0.15, 0.15], 5).unwrap();
        let gen = |a, n, seed| {
            stylecav::taskgen::generate_tasks(&s.corpus, a, CcLevel::Conversation, n, seed, None).unwrap().tasks
        };
        let (tr, dv) = (gen(&split.train, 3000, 5), gen(&split.dev, 500, 6));
        let model = EncoderModel::random(ngram_only(), 64, None, 5);
        let untrained =
            cross_cc_matrix("untrained", &model, &s.corpus, &[(CcLevel::Conversation, dv.clone())]).unwrap().cav[0].1;
        let config = TrainConfig { loss: LossKind::Triplet, learning_rate: 0.01, seed: 5, ..Default::default() };
        let (_, history) =
            train(&model, &s.corpus, &TrainingData::Triples(tr), &TrainingData::Triples(dv), &config).unwrap();
        (untrained, history)
    });
    let elapsed = start.elapsed();
    let dev = history.selected().dev_metric;
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.mean_loss).collect();
    let decreasing = losses[..history.selected_epoch].windows(2).all(|w| w[1] < w[0]);
    let pass = dev >= 0.9 && decreasing && elapsed < Duration::from_secs(120);
    let losses_s: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
    verdict(
        5,
        "planted-structure learning",
        pass,
        &format!(
            "dev CAV untrained {untrained:.3} -> trained {dev:.3} (epoch {}); epoch losses [{}]; {:.1}s on 1 thread",
            history.selected_epoch,
            losses_s.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6_cc_spread() {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let s = planted_corpus(&SynthConfig {
            n_authors: 300,
            utterances_per_author: 16,
            habit_consistency: 0.8,
            home_domain_prob: 0.95,
            seed,
            ..Default::default()
        });
        let split = split_authors(&s.corpus, [0.7, 0.15, 0.15], seed).unwrap();
        let train_sets = common::tasks_all_cc(&s.corpus, &split.train, 3000, seed);
        let dev_sets = common::tasks_all_cc(&s.corpus, &split.dev, 400, seed + 100);
        let test_sets = common::tasks_all_cc(&s.corpus, &split.test, 600, seed + 200);
        let model = EncoderModel::random(ngram_only(), 64, None, seed);
        let config = TrainConfig { learning_rate: 0.01, seed, ..Default::default() };
        let mut stds = Vec::new();
        for ix in [0, 2] {
            let (trained, _) = train(
                &model,
                &s.corpus,
                &TrainingData::Triples(train_sets[ix].1.clone()),
                &TrainingData::Triples(dev_sets[ix].1.clone()),
                &config,
            )
            .unwrap();
            let row = cross_cc_matrix(train_sets[ix].0.as_str(), &trained, &s.corpus, &test_sets).unwrap();
            stds.push(row.cav_std);
        }
        if stds[0] <= stds[1] {
            wins += 1;
        }
        lines.push(format!("seed {seed}: std conversation {:.3} vs random {:.3}", stds[0], stds[1]));
    }
    verdict(6, "CC spread", wins >= 2, &format!("{wins}/3 seeds; {}", lines.join("; ")));
}

#[test]
fn criterion_7_or_content_mechanics() {
    let inst = load_stel(&common::mini_stel_path()).unwrap();
    let oc: Vec<_> = inst.iter().map(make_or_content).collect();
    let oracle = common::StyleOracle::from_instances(&inst);
    let oracle_acc = or_content_accuracy(&oracle, &oc).unwrap().overall();
    let lexical_acc = or_content_accuracy(&common::LexicalEmbedder, &oc).unwrap().overall();
    let oracle_stel = stel_accuracy(&oracle, &inst).unwrap().overall();
    let pass = oc.len() == inst.len() && inst.len() == 8 && oracle_acc == 1.0 && lexical_acc == 0.0;
    verdict(
        7,
        "STEL-Or-Content mechanics",
        pass,
        &format!(
            "{} -> {} instances; oracle {oracle_acc:.2} (STEL {oracle_stel:.2}), lexical overlap {lexical_acc:.2}",
            inst.len(),
            oc.len()
        ),
    );
}

#[test]
fn criterion_8_clustering_cohesion() {
    let s = planted_corpus(&SynthConfig {
        n_authors: 70,
        utterances_per_author: 10,
        n_styles: Some(7),
        habit_consistency: 1.0,
        seed: 8,
        ..Default::default()
    });
    let model = EncoderModel::random(FeatureConfig::default(), 64, None, 8);
    let points: Vec<(String, StyleVector)> =
        s.corpus.utterances().iter().map(|u| (u.id.clone(), model.encode(&u.text).unwrap())).collect();
    let a = agglomerative(&points, 7, Linkage::Average).unwrap();
    let st = cohesion_stats(&a, &s.corpus, PairRelation::SameAuthor, 100, 8).unwrap();
    let cohesive = st.observed > st.baseline_mean + 3.0 * st.baseline_std;

    let mut recovered = Vec::new();
    for k_true in [3usize, 5, 7] {
        let blobs = common::vector_blobs(k_true, 30, 16, 0.05, 80 + k_true as u64);
        let sweep = sweep_k(&PointSet::new(&blobs).unwrap(), &(2..=12).collect::<Vec<_>>(), Linkage::Average).unwrap();
        recovered.push((k_true, sweep.best_k));
    }
    let pass = cohesive && recovered.iter().all(|(t, b)| t == b);
    verdict(
        8,
        "clustering cohesion",
        pass,
        &format!(
            "same-author {:.3} vs baseline {:.3} (std {:.4}, 100 trials); sweep (true, argmax) {recovered:?}",
            st.observed, st.baseline_mean, st.baseline_std
        ),
    );
}

/// Every stage's serialized output for one seed.
fn pipeline_artifacts(seed: u64) -> Vec<(&'static str, Vec<u8>)> {
    let s = planted_corpus(&SynthConfig { n_authors: 60, utterances_per_author: 10, seed, ..Default::default() });
    let mut out = Vec::new();
    let mut corpus_bytes = Vec::new();
    s.corpus.write_jsonl(&mut corpus_bytes).unwrap();
    out.push(("corpus", corpus_bytes));
    let split = split_authors(&s.corpus, [0.7, 0.15, 0.15], seed).unwrap();
    out.push(("split", serde_json::to_vec(&split).unwrap()));
    let train_sets = common::tasks_all_cc(&s.corpus, &split.train, 300, seed);
    let dev_sets = common::tasks_all_cc(&s.corpus, &split.dev, 40, seed);
    let test_sets = common::tasks_all_cc(&s.corpus, &split.test, 40, seed);
    let mut task_bytes = Vec::new();
    for (_, t) in train_sets.iter().chain(&dev_sets).chain(&test_sets) {
        write_tasks(&mut task_bytes, t, &s.corpus).unwrap();
    }
    out.push(("tasks", task_bytes));
    let model = EncoderModel::random(FeatureConfig { hash_dim: 256, ..Default::default() }, 16, Some(16), seed);
    let config = TrainConfig { learning_rate: 0.005, epochs: 2, seed, ..Default::default() };
    let (trained, history) = train(
        &model,
        &s.corpus,
        &TrainingData::Triples(train_sets[0].1.clone()),
        &TrainingData::Triples(dev_sets[0].1.clone()),
        &config,
    )
    .unwrap();
    out.push(("model", trained.to_json().unwrap().into_bytes()));
    out.push(("metrics", history.metrics_csv().into_bytes()));
    let row = cross_cc_matrix("trained", &trained, &s.corpus, &test_sets).unwrap();
    out.push(("eval", cross_cc_csv(&[row]).into_bytes()));
    let stel = load_stel(&common::mini_stel_path()).unwrap();
    let report = stel_accuracy(&trained, &stel).unwrap();
    out.push(("stel", report.csv_rows("stel").into_bytes()));
    let points: Vec<(String, StyleVector)> =
        s.corpus.utterances().iter().map(|u| (u.id.clone(), trained.encode(&u.text).unwrap())).collect();
    let a = agglomerative(&points, 5, Linkage::Average).unwrap();
    out.push(("clusters", a.csv().into_bytes()));
    let st = cohesion_stats(&a, &s.corpus, PairRelation::SameAuthor, 50, seed).unwrap();
    out.push(("cohesion", serde_json::to_vec(&st).unwrap()));
    out
}

#[test]
fn criterion_9_determinism() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| pipeline_artifacts(9))
    };
    let first = run(1);
    let runs = [run(1), run(4), run(8)];
    let mut differing = BTreeSet::new();
    for other in &runs {
        for ((name, a), (_, b)) in first.iter().zip(other) {
            if a != b {
                differing.insert(*name);
            }
        }
    }
    let stages: Vec<&str> = first.iter().map(|(n, _)| *n).collect();
    verdict(
        9,
        "determinism",
        differing.is_empty(),
        &format!("stages {stages:?} compared over 4 runs (1, 1, 4, 8 threads); differing: {differing:?}"),
    );
}
