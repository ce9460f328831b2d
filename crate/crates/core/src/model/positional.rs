use ndarray::{Array1, Array2};

/// Sinusoidal encoding of segment position `l` (1-based) with base 10^5:
/// entry `d` is `sin(l / 10^(5d/D))` for even `d` and
/// `cos(l / 10^(5(d-1)/D))` for odd `d`.
pub fn positional_encoding(l: usize, d_model: usize) -> Array1<f64> {
    Array1::from_shape_fn(d_model, |d| {
        let even = d - d % 2;
        let angle = l as f64 / 10f64.powf(5.0 * even as f64 / d_model as f64);
        if d % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Rows `pos(1) .. pos(L)`.
pub fn positional_table(len: usize, d_model: usize) -> Array2<f64> {
    let mut table = Array2::zeros((len, d_model));
    for (i, mut row) in table.rows_mut().into_iter().enumerate() {
        row.assign(&positional_encoding(i + 1, d_model));
    }
    table
}
