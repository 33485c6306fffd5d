use pyo3::prelude::*;

#[pymodule]
fn memrl(_py: Python<'_>, _m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
