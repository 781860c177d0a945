use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use convsim_ffi::*;

const DATASET: &str = r#"{"name": "tiny", "records": [
  {"context": {"id": "c1", "title": "Virginia Woolf", "background": "English writer.",
    "section_header": "Talland House", "section_text": "Julia died in 1895. Leslie Stephen died in 1904."},
   "qas": [
     {"id": "c1_q#0", "question": "When did Julia die?", "answers": [{"text": "Julia died in 1895.", "answer_start": 0}]},
     {"id": "c1_q#1", "question": "And Leslie?", "answers": [{"text": "Leslie Stephen died in 1904.", "answer_start": 20}]},
     {"id": "c1_q#2", "question": "Anything else?", "answers": [{"text": "I cannot find the answer.", "answer_start": -1}]}
   ]}
]}"#;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = convsim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(dir: &Path) -> *mut ConvsimDataset {
    let path = dir.join("tiny.json");
    std::fs::write(&path, DATASET).unwrap();
    let path = cstr(path.to_str().unwrap());
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { convsim_dataset_load(path.as_ptr(), &mut handle) },
        ConvsimStatus::Ok
    );
    assert!(!handle.is_null());
    handle
}

#[test]
fn dataset_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let handle = load(dir.path());
    unsafe {
        let mut stats = ConvsimStats::default();
        assert_eq!(convsim_dataset_stats(handle, &mut stats), ConvsimStatus::Ok);
        assert_eq!(
            (stats.n_conversations, stats.n_questions, stats.n_answered),
            (1, 3, 2)
        );
        assert_eq!(stats.avg_answers_per_question, 1.0);

        let mut cov = ConvsimSummary::default();
        assert_eq!(
            convsim_dataset_coverage(handle, &mut cov),
            ConvsimStatus::Ok
        );
        assert_eq!(cov.n, 1);
        assert!((cov.mean - 47.0 / 48.0).abs() < 1e-12);

        let mut flow = ConvsimSummary::default();
        assert_eq!(convsim_dataset_flow(handle, &mut flow), ConvsimStatus::Ok);
        assert_eq!((flow.mean, flow.n, flow.n_excluded), (1.0, 1, 0));

        let mut json = ptr::null_mut();
        assert_eq!(
            convsim_dataset_report_json(handle, &mut json),
            ConvsimStatus::Ok
        );
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        assert!(text.contains("\"n_answered\":2"));
        convsim_string_free(json);
        convsim_dataset_free(handle);
        convsim_dataset_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_reported() {
    let missing = cstr("/definitely/not/here.json");
    let mut handle = ptr::null_mut();
    let status = unsafe { convsim_dataset_load(missing.as_ptr(), &mut handle) };
    assert_eq!(status, ConvsimStatus::IoError);
    assert!(handle.is_null());
    assert!(last_error().contains("here.json"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"records\": 3}").unwrap();
    let bad = cstr(bad.to_str().unwrap());
    assert_eq!(
        unsafe { convsim_dataset_load(bad.as_ptr(), &mut handle) },
        ConvsimStatus::ParseError
    );
    assert_eq!(
        unsafe { convsim_dataset_load(ptr::null(), &mut handle) },
        ConvsimStatus::NullArgument
    );
    let mut stats = ConvsimStats::default();
    assert_eq!(
        unsafe { convsim_dataset_stats(ptr::null(), &mut stats) },
        ConvsimStatus::NullArgument
    );
}

#[test]
fn validation_through_c_abi() {
    let title = cstr("Virginia Woolf");
    let background = cstr("Adeline Virginia Woolf was an English writer.");
    let header = cstr("Talland House");
    let section = cstr("The family spent summers at Talland House in St Ives.");
    let ctx = ConvsimContext {
        title: title.as_ptr(),
        background: background.as_ptr(),
        section_header: header.as_ptr(),
        section_text: section.as_ptr(),
    };
    let mut v = ConvsimVerdict {
        valid: false,
        cannot_find: false,
        failure: ConvsimFailure::None,
        n_spans: 0,
    };
    let check = |raw: &str, v: &mut ConvsimVerdict| {
        let raw = cstr(raw);
        assert_eq!(
            unsafe { convsim_validate_answer(raw.as_ptr(), &ctx, 40, v) },
            ConvsimStatus::Ok
        );
    };
    check("Talland House in St Ives", &mut v);
    assert!(v.valid && v.n_spans == 1);
    check("an English writer", &mut v);
    assert_eq!(v.failure, ConvsimFailure::CopiedFromBackground);
    check("a lighthouse", &mut v);
    assert_eq!(v.failure, ConvsimFailure::NotASpan);
    check("I cannot find the answer.", &mut v);
    assert!(v.valid && v.cannot_find);
}

#[test]
fn scores_kappa_and_krcc() {
    let mut s = ConvsimTokenScore::default();
    let (p, g) = (cstr("the cat sat"), cstr("cat sat down"));
    assert_eq!(
        unsafe { convsim_token_score(p.as_ptr(), g.as_ptr(), &mut s) },
        ConvsimStatus::Ok
    );
    assert!((s.f1 - 0.8).abs() < 1e-12 && !s.em);
    let none = cstr("CANNOTANSWER");
    let canon = cstr("I cannot find the answer.");
    unsafe { convsim_token_score(none.as_ptr(), canon.as_ptr(), &mut s) };
    assert!(s.em && s.f1 == 1.0);

    let counts: [u32; 16] = [3, 0, 0, 0, 2, 1, 0, 0, 1, 1, 1, 0, 0, 0, 2, 1];
    let mut k = 0.0;
    assert_eq!(
        unsafe { convsim_fleiss_kappa(counts.as_ptr(), 4, 4, &mut k) },
        ConvsimStatus::Ok
    );
    assert!((k - 5.0 / 47.0).abs() < 1e-12);
    assert_eq!(
        unsafe { convsim_fleiss_kappa(counts.as_ptr(), 0, 4, &mut k) },
        ConvsimStatus::InvalidArgument
    );

    let mut tau = 0.0;
    let positions = [1u64, 0, 2];
    assert_eq!(
        unsafe { convsim_krcc(positions.as_ptr(), 3, &mut tau) },
        ConvsimStatus::Ok
    );
    assert!((tau - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(
        unsafe { convsim_krcc(positions.as_ptr(), 1, &mut tau) },
        ConvsimStatus::Undefined
    );
    assert!(!last_error().is_empty());
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(convsim_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/convsim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "convsim_dataset_load",
        "convsim_dataset_free",
        "convsim_fleiss_kappa",
        "convsim_last_error",
        "typedef struct ConvsimDataset ConvsimDataset",
        "CONVSIM_STATUS_OK = 0",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
