use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Other,
}

/// Images flattened to rows of `height * width` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub protected_ids: Option<Vec<usize>>,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        height: usize,
        width: usize,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            protected_ids: None,
            height,
            width,
            classes,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_protected(mut self, ids: Vec<usize>) -> Result<Self> {
        self.protected_ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let pixels = self.height * self.width;
        if self.images.shape() != [n, pixels] {
            return Err(Error::dim("dataset images", self.images.shape(), &[n, pixels]));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Data(format!(
                "label {bad} outside 0..{}",
                self.classes
            )));
        }
        if let Some(ids) = &self.protected_ids {
            if ids.len() != n {
                return Err(Error::Data(format!(
                    "{} protected ids for {n} examples",
                    ids.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    /// Rows in the given order; labels and protected ids follow.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Data("empty subset".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Index {
                what: "dataset row",
                index: bad,
                limit: self.len(),
            });
        }
        Ok(Self {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            protected_ids: self
                .protected_ids
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
            height: self.height,
            width: self.width,
            classes: self.classes,
            split: self.split,
        })
    }

    /// The first `n` examples (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// Examples whose label satisfies `keep`.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.subset(&idx)
    }

    /// Same images with new row data (e.g. after a corruption or attack).
    pub fn with_images(&self, images: Tensor) -> Result<Self> {
        let mut out = self.clone();
        out.images = images;
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        let images = Tensor::new([3, 4], (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        LabeledDataset::new(images, vec![0, 1, 2], 2, 2, 3, Split::Test).unwrap()
    }

    #[test]
    fn subset_keeps_fields_aligned() {
        let ds = tiny().with_protected(vec![1, 0, 1]).unwrap();
        let s = ds.subset(&[2, 0]).unwrap();
        assert_eq!(s.labels, vec![2, 0]);
        assert_eq!(s.protected_ids, Some(vec![1, 1]));
        assert_eq!(s.image(0), ds.image(2));
    }

    #[test]
    fn rejects_inconsistent_fields() {
        let images = Tensor::zeros([2, 4]);
        assert!(LabeledDataset::new(images.clone(), vec![0], 2, 2, 2, Split::Train).is_err());
        assert!(LabeledDataset::new(images.clone(), vec![0, 5], 2, 2, 2, Split::Train).is_err());
        let ds = LabeledDataset::new(images, vec![0, 1], 2, 2, 2, Split::Train).unwrap();
        assert!(ds.with_protected(vec![0]).is_err());
    }

    #[test]
    fn filter_and_head() {
        let ds = tiny();
        assert_eq!(ds.filter_labels(|l| l != 1).unwrap().labels, vec![0, 2]);
        assert_eq!(ds.head(10).unwrap().len(), 3);
        assert!(ds.filter_labels(|_| false).is_err());
    }
}
