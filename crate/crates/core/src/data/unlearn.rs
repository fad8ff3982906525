use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// One client's private data, remembering where each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    client_id: u32,
    dataset: Dataset,
    origin_indices: Vec<usize>,
}

impl Shard {
    pub fn new(client_id: u32, dataset: Dataset, origin_indices: Vec<usize>) -> Result<Self> {
        if origin_indices.len() != dataset.len() {
            return Err(Error::Shape(format!("{} origin indices for {} rows", origin_indices.len(), dataset.len())));
        }
        let unique: BTreeSet<_> = origin_indices.iter().collect();
        if unique.len() != origin_indices.len() {
            return Err(Error::Partition("duplicate origin index in shard".into()));
        }
        Ok(Self { client_id, dataset, origin_indices })
    }

    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn origin_indices(&self) -> &[usize] {
        &self.origin_indices
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    fn keep(&self, positions: &[usize]) -> Shard {
        Shard {
            client_id: self.client_id,
            dataset: self.dataset.subset(positions),
            origin_indices: positions.iter().map(|&p| self.origin_indices[p]).collect(),
        }
    }
}

/// What to forget. Indices refer to the parent dataset (origin indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    ByIndices(Vec<usize>),
    ByClass(usize),
}

impl Selector {
    pub fn none() -> Self {
        Selector::ByIndices(Vec::new())
    }

    /// Parses `none`, `class:<c>` or `indices:<i>,<j>,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "none" {
            return Ok(Self::none());
        }
        let bad = || Error::Selector(format!("cannot parse selector `{text}`"));
        if let Some(c) = text.strip_prefix("class:") {
            return c.trim().parse().map(Selector::ByClass).map_err(|_| bad());
        }
        if let Some(list) = text.strip_prefix("indices:") {
            if list.trim().is_empty() {
                return Ok(Self::none());
            }
            return list
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()
                .map(Selector::ByIndices);
        }
        Err(bad())
    }

    pub fn describe(&self) -> String {
        match self {
            Selector::ByIndices(v) if v.is_empty() => "none".into(),
            Selector::ByIndices(v) => {
                format!("indices:{}", v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
            }
            Selector::ByClass(c) => format!("class:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    pub client_id: u32,
    pub selector: Selector,
}

impl UnlearnRequest {
    pub fn new(client_id: u32, selector: Selector) -> Self {
        Self { client_id, selector }
    }
}

/// Splits a shard into `(remaining, forgotten)`; the input is not modified.
pub fn split_unlearn_request(shard: &Shard, req: &UnlearnRequest) -> Result<(Shard, Shard)> {
    if req.client_id != shard.client_id {
        return Err(Error::Selector(format!(
            "request for client {} applied to shard of client {}",
            req.client_id, shard.client_id
        )));
    }
    let selected: Vec<bool> = match &req.selector {
        Selector::ByIndices(list) => {
            let mut hit = vec![false; shard.len()];
            for &origin in list {
                let pos = shard.origin_indices.iter().position(|&o| o == origin).ok_or_else(|| {
                    Error::Selector(format!("index {origin} is not in client {}'s shard", shard.client_id))
                })?;
                hit[pos] = true;
            }
            hit
        }
        Selector::ByClass(c) => {
            if *c >= shard.dataset.class_count() {
                return Err(Error::Selector(format!("class {c} outside {} classes", shard.dataset.class_count())));
            }
            shard.dataset.labels().iter().map(|y| y == c).collect()
        }
    };
    let (forget, keep): (Vec<usize>, Vec<usize>) = (0..shard.len()).partition(|&p| selected[p]);
    Ok((shard.keep(&keep), shard.keep(&forget)))
}

/// `D_u^k`: the shard without the selected samples.
pub fn apply_unlearn_request(shard: &Shard, req: &UnlearnRequest) -> Result<Shard> {
    split_unlearn_request(shard, req).map(|(kept, _)| kept)
}
