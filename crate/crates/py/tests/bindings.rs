use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: for<'py> FnOnce(Python<'py>, &Bound<'py, PyModule>) -> PyResult<()>>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "nadet_py").unwrap();
        nadet_py::nadet_py(&m).unwrap();
        f(py, &m).unwrap();
    });
}

#[test]
fn segment_and_span_recovery() {
    with_module(|_py, m| {
        let text = "Cars need care. Oil matters. Tyres wear out. Brakes too.";
        let ranges: Vec<(usize, usize)> = m.getattr("segment")?.call1((text,))?.extract()?;
        assert_eq!(ranges.len(), 4);
        let ins = m
            .getattr("template_insert")?
            .call1((text, "Axle Pro", vec!["long warranty".to_string()], "car"))?;
        let ins = ins.cast::<PyDict>()?;
        let modified: String = ins.get_item("text")?.unwrap().extract()?;
        let span: (usize, usize) = ins.get_item("span")?.unwrap().extract()?;
        let recovered: (usize, usize) = m.getattr("extract_insertion_span")?.call1((text, modified))?.extract()?;
        assert_eq!(recovered, span);
        Ok(())
    });
}

#[test]
fn errors_become_python_exceptions() {
    with_module(|py, m| {
        let err = m.getattr("parse_llm_output")?.call1(("no idea",)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let err = m.getattr("confidence_interval")?.call1((vec![0.5],)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let err = m.getattr("Detector")?.getattr("load")?.call1(("/nonexistent/checkpoint",)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyOSError>(py));
        Ok(())
    });
}

#[test]
fn metrics_match_core() {
    with_module(|_py, m| {
        let (lo, hi): (f64, f64) = m.getattr("confidence_interval")?.call1((vec![0.8, 0.9, 1.0],))?.extract()?;
        assert!((lo - 0.652).abs() < 1e-3 && hi == 1.0);
        let f: f64 = m.getattr("rouge1_f1")?.call1(("cheap hotels", "cheap hotels"))?.extract()?;
        assert_eq!(f, 1.0);
        Ok(())
    });
}
