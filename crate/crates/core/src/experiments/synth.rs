//! Seeded synthetic tabular datasets.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::data::{
    Cell, Column, ColumnKind, EncodedDataset, LabelSpec, LabelVocabulary, Preprocessor, RawDataset, RawRecord,
    Schema, Task,
};
use crate::error::Result;
use crate::layers::Rng;

fn schema(numeric: &[String], nominal: &[String], categories: Vec<String>) -> Schema {
    let mut cols: Vec<Column> = numeric.iter().map(|n| Column::new(n.clone(), ColumnKind::Numeric)).collect();
    cols.extend(nominal.iter().map(|n| Column::new(n.clone(), ColumnKind::Nominal)));
    cols.push(Column::new("label", ColumnKind::Label));
    Schema::new(
        cols,
        false,
        LabelSpec::Custom(LabelVocabulary {
            normal: "normal".into(),
            categories,
            aliases: Default::default(),
        }),
    )
    .expect("synthetic schema")
}

/// Two Gaussian blobs over `numeric` columns plus two binary nominal
/// columns, balanced classes. Encodes to `numeric + 4` features.
///
/// Class 1 is shifted by `separation` standard deviations along the
/// diagonal; each nominal column agrees with the class 75% of the time.
pub fn two_blobs_raw(n: usize, numeric: usize, separation: f64, seed: u64) -> RawDataset {
    let mut rng = Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let shift = separation / (numeric as f64).sqrt();
    let names: Vec<String> = (0..numeric).map(|i| format!("x{i}")).collect();
    let nominal = vec!["proto".to_string(), "flag".to_string()];
    let vocab = [["tcp", "udp"], ["SF", "S0"]];
    let records = (0..n)
        .map(|i| {
            let y = i % 2;
            let mut features: Vec<Cell> = (0..numeric)
                .map(|_| Cell::Number(noise.sample(&mut rng) + shift * y as f64))
                .collect();
            for v in vocab {
                let agree = rng.random_bool(0.75);
                let k = if agree { y } else { 1 - y };
                features.push(Cell::Text(v[k].to_string()));
            }
            RawRecord {
                features,
                label: if y == 0 { "normal" } else { "attack" }.into(),
            }
        })
        .collect();
    RawDataset {
        schema: schema(&names, &nominal, vec!["attack".into()]),
        records,
    }
}

/// Encoded two-blob set of width 12 (8 numeric columns, 2 nominal columns).
pub fn two_blobs(n: usize, seed: u64) -> Result<EncodedDataset> {
    let raw = two_blobs_raw(n, 8, 5.0, seed);
    Preprocessor::fit(&raw, Task::Binary)?.transform(&raw)
}

/// `width` uniform numeric columns; the label is `x[planted] > 0.5` and no
/// other column carries information.
pub fn planted_feature(n: usize, width: usize, planted: usize, seed: u64) -> Result<EncodedDataset> {
    assert!(planted < width, "planted column outside the feature range");
    let mut rng = Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..width).map(|i| format!("f{i}")).collect();
    let records = (0..n)
        .map(|_| {
            let values: Vec<f64> = (0..width).map(|_| rng.random::<f64>()).collect();
            let y = values[planted] > 0.5;
            RawRecord {
                features: values.into_iter().map(Cell::Number).collect(),
                label: if y { "attack" } else { "normal" }.into(),
            }
        })
        .collect();
    let raw = RawDataset {
        schema: schema(&names, &[], vec!["attack".into()]),
        records,
    };
    Preprocessor::fit(&raw, Task::Binary)?.transform(&raw)
}

/// `classes`-way Gaussian mixture over `width` numeric columns.
pub fn gaussian_mixture(n: usize, width: usize, classes: usize, separation: f64, seed: u64) -> Result<EncodedDataset> {
    let mut rng = Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..width).map(|_| noise.sample(&mut rng) * separation).collect())
        .collect();
    let names: Vec<String> = (0..width).map(|i| format!("x{i}")).collect();
    let categories: Vec<String> = (1..classes).map(|c| format!("attack{c}")).collect();
    let records = (0..n)
        .map(|i| {
            let y = i % classes;
            RawRecord {
                features: centres[y]
                    .iter()
                    .map(|c| Cell::Number(c + noise.sample(&mut rng)))
                    .collect(),
                label: if y == 0 { "normal".into() } else { categories[y - 1].clone() },
            }
        })
        .collect();
    let raw = RawDataset {
        schema: schema(&names, &[], categories),
        records,
    };
    Preprocessor::fit(&raw, Task::Multiclass)?.transform(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_shape() {
        let ds = two_blobs(100, 1).unwrap();
        assert_eq!(ds.width(), 12);
        assert_eq!(ds.class_counts(), [50, 50]);
        assert_eq!(two_blobs(100, 1).unwrap(), ds);
    }

    #[test]
    fn planted_label_follows_column() {
        let ds = planted_feature(200, 12, 5, 3).unwrap();
        let rows: Vec<(&[f64], usize)> = ds.features.data().chunks(12).zip(ds.labels.iter().copied()).collect();
        let top_normal = rows.iter().filter(|r| r.1 == 0).map(|r| r.0[5]).fold(f64::MIN, f64::max);
        let low_attack = rows.iter().filter(|r| r.1 == 1).map(|r| r.0[5]).fold(f64::MAX, f64::min);
        assert!(top_normal < low_attack);
    }

    #[test]
    fn mixture_classes() {
        let ds = gaussian_mixture(90, 6, 3, 2.0, 0).unwrap();
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.class_counts(), [30, 30, 30]);
    }
}
