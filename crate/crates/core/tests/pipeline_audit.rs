mod common;

use std::fs;
use std::path::Path;

use common::{blob_task, small_config, task_batches, two_task_pipeline, WIDTH};
use mbrain_core::datasets::TaskStream;
use mbrain_core::experts::TeacherState;
use mbrain_core::nn::{Activation, DenseNet, Prng};
use mbrain_core::pipeline::{load_library, save_library, ExpertLibrary, Phase, Pipeline, SessionState};
use mbrain_core::Error;

#[test]
fn every_session_step_touches_disjoint_parameters() {
    let cfg = small_config();
    let mut p = Prng::new(3);
    let backbone = DenseNet::mlp(&[WIDTH, 8], Activation::Relu, Activation::Relu, &mut p).unwrap();
    let backbone_digest = backbone.digest();
    let mut teacher = TeacherState::new(Some(backbone), WIDTH, 2, cfg.teacher_config(), p.child(1)).unwrap();
    let mut session = SessionState::spawn(&cfg, 0, 8, 77).unwrap();
    let mut distilled = 0;
    for epoch in 0..4 {
        for batch in task_batches(0.0, 20 + epoch) {
            let h = teacher.features(&batch.features.view()).unwrap();
            let mut t2 = teacher.clone();
            t2.loss_step(&h.view(), &batch.labels).unwrap();
            let mut r2 = session.router().unwrap().clone();
            r2.train_step_scaled(&h.view(), cfg.gamma as f32).unwrap();
            let mut s2 = session.student().unwrap().clone();
            if t2.warmed_up() {
                let z_t = t2.logits(&h.view()).unwrap();
                s2.distill_step(&h.view(), &z_t.view(), cfg.temperature as f32, cfg.beta as f32).unwrap();
                distilled += 1;
            }

            session.step(&cfg, &mut teacher, batch.view()).unwrap();

            assert_eq!(teacher.backbone().unwrap().digest(), backbone_digest);
            assert_eq!(teacher.head().digest(), t2.head().digest());
            assert_eq!(session.router().unwrap().digest(), r2.digest());
            assert_eq!(session.student().unwrap().digest(), s2.digest());
        }
    }
    assert!(distilled > 0, "audit never reached the distilling phase");
    assert_eq!(session.phase(), Phase::Distilling);
}

#[test]
fn distillation_leaves_the_teacher_untouched() {
    let cfg = small_config();
    let mut teacher = TeacherState::new(None, WIDTH, 2, cfg.teacher_config(), Prng::new(4)).unwrap();
    let session = SessionState::spawn(&cfg, 0, WIDTH, 5).unwrap();
    let mut student = session.student().unwrap().clone();
    let data = blob_task(0.0, 60, 6);
    teacher.loss_step(&data.features.view(), &data.labels).unwrap();
    let before = teacher.head().digest();
    let z_t = teacher.logits(&data.features.view()).unwrap();
    let student_before = student.digest();
    for _ in 0..20 {
        student.distill_step(&data.features.view(), &z_t.view(), 2.0, 1.0).unwrap();
    }
    assert_eq!(teacher.head().digest(), before);
    assert_ne!(student.digest(), student_before);
}

fn all_bytes(dir: &Path) -> Vec<u8> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        out.extend(fs::read(entry.unwrap().path()).unwrap());
    }
    out
}

#[test]
fn commit_purges_and_persists_no_samples() {
    let p = two_task_pipeline();
    let s = p.session().unwrap();
    assert_eq!(s.phase(), Phase::Committed);
    assert_eq!(s.buffer().len(), 0);
    assert_eq!(s.holdout().len(), 0);
    assert!(s.student().is_none() && s.router().is_none());

    let dir = tempfile::tempdir().unwrap();
    save_library(p.library(), dir.path()).unwrap();
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["expert_0.mbnn", "expert_1.mbnn", "manifest.json", "router_0.mbnn", "router_1.mbnn"]);

    let persisted = all_bytes(dir.path());
    for (center, seed) in [(0.0, 1), (3.0, 2)] {
        let data = blob_task(center, 400, seed);
        for row in data.features.rows() {
            let needle: Vec<u8> = row.iter().take(3).flat_map(|v| v.to_le_bytes()).collect();
            assert!(!persisted.windows(needle.len()).any(|w| w == needle.as_slice()));
        }
    }
}

#[test]
fn tags_never_reach_the_pipeline() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut sources = vec![root.join("inference.rs")];
    for entry in fs::read_dir(root.join("pipeline")).unwrap() {
        sources.push(entry.unwrap().path());
    }
    for path in sources {
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains("task_tag"), "{} mentions task tags", path.display());
    }

    let run = |tagged: bool| {
        let mut p = Pipeline::new(small_config(), WIDTH, None).unwrap();
        for (center, seed, tag) in [(0.0, 1, "A"), (3.0, 2, "B"), (0.0, 3, "A")] {
            let set = blob_task(center, 400, seed);
            if tagged {
                let stream = TaskStream::from_set(&set, tag, 20, 1, &mut Prng::new(seed));
                for b in &stream.batches {
                    p.observe(b.data()).unwrap();
                }
            } else {
                for b in set.shuffled_batches(20, &mut Prng::new(seed)) {
                    p.observe(b.view()).unwrap();
                }
            }
            p.flush().unwrap();
        }
        p
    };
    let tagged = run(true);
    let blind = run(false);
    assert_eq!(tagged.decisions(), blind.decisions());
    let digests = |p: &Pipeline| -> Vec<String> {
        p.library().records().iter().map(|r| r.student.digest() + &r.router.digest()).collect()
    };
    assert_eq!(digests(&tagged), digests(&blind));
    assert_eq!(tagged.library().len(), 2);
}

#[test]
fn library_round_trip_and_tampering() {
    let p = two_task_pipeline();
    let dir = tempfile::tempdir().unwrap();
    save_library(p.library(), dir.path()).unwrap();
    let loaded = load_library(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    for (a, b) in p.library().records().iter().zip(loaded.records()) {
        assert_eq!(a.student.digest(), b.student.digest());
        assert_eq!(a.router.digest(), b.router.digest());
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.slice, b.slice);
        assert!(b.student.is_frozen() && b.router.is_frozen());
    }

    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    let digest = p.library().records()[1].student.digest();
    fs::write(&manifest, text.replace(&digest, &"0".repeat(digest.len()))).unwrap();
    assert!(matches!(load_library(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn empty_library_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    save_library(&ExpertLibrary::new(), dir.path()).unwrap();
    assert!(load_library(dir.path()).unwrap().is_empty());
}
