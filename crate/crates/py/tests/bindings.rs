use std::ffi::CString;

use advbid::{act, default_config, generate, replay, run_eval, run_expert, run_gen, run_report, run_train, score, solve, PyDay};
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

fn attach<T>(f: impl FnOnce(Python<'_>) -> T) -> T {
    Python::initialize();
    Python::attach(f)
}

#[test]
fn day_oracle_and_metrics() {
    attach(|py| {
        let days = generate(py, Some(&default_config(true))).unwrap();
        let day = &days[0];
        let expert = solve(py, day, 32).unwrap();
        assert!(!expert.flagged);
        let out = replay(day, expert.ratios.clone()).unwrap();
        assert!((out.utility - expert.utility).abs() <= 5e-3 * expert.utility);
        let (cr, tacr, at_gamma) = score(day, &out, expert.utility, 0.02, 0.05).unwrap();
        assert!(cr > 0.99 && tacr <= at_gamma);
        let back = PyDay { inner: serde_json::from_str(&serde_json::to_string(&day.inner).unwrap()).unwrap() };
        assert_eq!(back.inner, day.inner);
        let err = replay(day, vec![-1.0]).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
    });
}

#[test]
fn pipeline_stages() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    attach(|py| {
        let err = run_expert(py, p("missing"), p("experts"), None, 1).unwrap_err();
        assert!(err.is_instance_of::<PyFileNotFoundError>(py), "{err}");
        run_gen(py, p("dataset"), Some(&default_config(true))).unwrap();
        run_expert(py, p("dataset"), p("experts"), None, 1).unwrap();
        let err = run_train(py, "nosuch", 0, p("dataset"), p("experts"), p("train/x"), None, false).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        run_train(py, "mirocl", 0, p("dataset"), p("experts"), p("train/mirocl"), None, false).unwrap();
        let (_, tacr) = run_eval(py, p("train/mirocl"), p("dataset"), p("experts"), p("eval/mirocl"), "test", None).unwrap();
        assert!(tacr.is_some_and(|t| t >= 0.0));
        let table = run_report(py, vec![p("eval")], p("report"), false).unwrap();
        assert!(table.contains("mirocl"), "{table}");
        let out = act(py, p("train/mirocl"), p("dataset"), p("experts"), 0, None).unwrap();
        assert_eq!(out.ratios.len(), 8);
    });
}

#[test]
fn module_is_importable() {
    attach(|py| {
        let m = pyo3::wrap_pymodule!(advbid::advbid)(py);
        py.import("sys").unwrap().getattr("modules").unwrap().set_item("advbid", m).unwrap();
        let code = CString::new(
            "import advbid\n\
             days = advbid.generate(advbid.default_config(smoke=True))\n\
             assert len(days) > 0 and days[0].slots == 8\n\
             out = advbid.replay(days[0], [1.0])\n\
             assert out.utility >= 0 and len(out.ratios) == 8\n\
             assert 'mirocl' in advbid.algorithms()\n\
             assert advbid.tolerance_level(0.99, 1.0) == 1\n",
        )
        .unwrap();
        py.run(&code, None, None).unwrap();
    });
}
