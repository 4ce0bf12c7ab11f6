use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::cflhkd::cflhkd;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyModule>)>(f: F) {
    pyo3::append_to_inittab!(cflhkd);
    Python::initialize();
    Python::attach(|py| {
        let m = py.import("cflhkd").unwrap();
        f(py, &m);
    });
}

#[test]
fn module_runs_a_small_simulation() {
    with_module(|py, m| {
        let cfg = "rounds = 3\nlocal_epochs = 1\n[data.partition]\nnum_clients = 8\nsamples_min = 20\nsamples_max = 30\n";
        let kwargs = PyDict::new(py);
        kwargs.set_item("seed", 1u64).unwrap();
        let res = m.getattr("run").unwrap().call((cfg,), Some(&kwargs)).unwrap();
        let metrics = res.get_item("metrics").unwrap();
        assert_eq!(metrics.len().unwrap(), 3);

        let err = m.getattr("run").unwrap().call1((cfg, 1u64, "bogus")).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));

        let labels: Vec<usize> = m
            .getattr("cluster")
            .unwrap()
            .call1((vec![vec![0.0, 0.9], vec![0.9, 0.0]], 0.1))
            .unwrap()
            .extract()
            .unwrap();
        assert_ne!(labels[0], labels[1]);
    });
}
