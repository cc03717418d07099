//! Seeded synthetic binary-classification tables with a logistic ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tabular::{Result, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub n_features: usize,
    /// Columns that enter the logit; everything else is noise.
    pub informative: Vec<usize>,
    /// Scale of the logit, i.e. how separable the classes are.
    pub signal: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `informative` leading columns followed by `noise` noise columns.
    pub fn new(rows: usize, informative: usize, noise: usize, seed: u64) -> Self {
        Self {
            rows,
            n_features: informative + noise,
            informative: (0..informative).collect(),
            signal: 4.0,
            seed,
        }
    }
}

/// Features are standard normal; `P(y = 1) = sigmoid(signal * w . x / |w|)`
/// with random unit-norm weights `w` over the informative columns.
pub fn generate(spec: &SyntheticSpec) -> Result<Table> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weights = vec![0.0; spec.n_features];
    for &j in &spec.informative {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        weights[j] = sign * rng.gen_range(0.5..1.5);
    }
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        weights.iter_mut().for_each(|w| *w /= norm);
    }
    let mut rows = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let x: Vec<f64> = (0..spec.n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let logit = spec.signal * x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        let p = crate::tensor::sigmoid(logit);
        labels.push(u8::from(rng.gen::<f64>() < p));
        rows.push(x);
    }
    let names = (0..spec.n_features).map(|j| format!("f{j}")).collect();
    Table::from_numeric(names, &rows, labels)
}

/// Writes a table of numeric cells as CSV with a trailing `label` column.
pub fn write_csv<W: std::io::Write>(table: &Table, out: W) -> csv::Result<()> {
    use crate::tabular::Cell;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = table.column_names().to_vec();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..table.n_rows() {
        let mut rec: Vec<String> = (0..table.n_cols())
            .map(|j| match &table.column(j)[i] {
                Cell::Missing => String::new(),
                Cell::Number(v) => format!("{v}"),
                Cell::Text(s) => s.clone(),
            })
            .collect();
        rec.push(table.labels()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
