use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn chatscope(project: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chatscope"))
        .arg("--project")
        .arg(project)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stub_llm(rt: &tokio::runtime::Runtime) -> String {
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(chatscope_server::serve(listener, chatscope_server::stub_llm_router()));
    format!("http://{addr}/v1/chat/completions")
}

fn write_fixture(root: &Path, url: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_chatscope"))
        .args(["fixture", "--sessions", "2", "--messages", "24", "--llm-url", url])
        .arg(root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn manifest_outputs(root: &Path, stage_dir: &str) -> Value {
    let text = std::fs::read_to_string(root.join(stage_dir).join(chatscope_core::pipeline::MANIFEST_FILE)).unwrap();
    serde_json::from_str::<Value>(&text).unwrap()["outputs"].clone()
}

#[test]
fn full_run_is_reproducible_and_scored() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let url = stub_llm(&rt);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for root in [&a, &b] {
        write_fixture(root, &url);
        let out = chatscope(root, &["run"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }

    for stage_dir in ["frames", "ocr", "corpus", "conversations", "verdicts", "eval", "annotations"] {
        let (x, y) = (manifest_outputs(&a, stage_dir), manifest_outputs(&b, stage_dir));
        assert!(x.as_object().is_some_and(|o| !o.is_empty()), "{stage_dir}");
        assert_eq!(x, y, "{stage_dir} digests differ");
    }

    let ocr: Value = serde_json::from_str(&std::fs::read_to_string(a.join("eval/ocr.json")).unwrap()).unwrap();
    assert!(ocr["report"]["recall"].as_f64().is_some_and(|r| r > 0.5), "{ocr}");
    assert!(a.join("eval/classifier.json").exists());
    assert!(a.join("annotations/pools.json").exists());

    // the private transcript directory stays owner-only
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(a.join("private")).unwrap().permissions().mode();
        assert_eq!(mode & 0o077, 0);
    }
}

#[test]
fn stage_without_prerequisite_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("p");
    write_fixture(&root, "http://127.0.0.1:9/v1/chat/completions");
    let out = chatscope(&root, &["chunk"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("modevents"), "{err}");
}
