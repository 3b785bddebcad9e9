use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half;
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Query,
    Gallery,
    Train,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Query => 0,
            Role::Gallery => 1,
            Role::Train => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        match code {
            0 => Some(Role::Query),
            1 => Some(Role::Gallery),
            2 => Some(Role::Train),
            _ => None,
        }
    }
}

/// Identity metadata of one query or gallery entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Meta {
    pub person_id: u32,
    pub camera_id: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub person_id: u32,
    pub camera_id: u16,
    pub role: Role,
    pub vector: Vec<f32>,
}

impl Record {
    pub fn meta(&self) -> Meta {
        Meta {
            person_id: self.person_id,
            camera_id: self.camera_id,
        }
    }
}

/// Role-tagged vectors of a uniform dimension. With `Binary16` precision every
/// component is binary16-representable.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    precision: Precision,
    records: Vec<Record>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, precision: Precision) -> Self {
        EmbeddingSet {
            dim,
            precision,
            records: Vec::new(),
        }
    }

    pub fn from_records(dim: usize, precision: Precision, records: Vec<Record>) -> Result<Self> {
        let mut set = EmbeddingSet::new(dim, precision);
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "record of dimension {} in a set of dimension {}",
                record.vector.len(),
                self.dim
            )));
        }
        if self.precision == Precision::Binary16
            && record
                .vector
                .iter()
                .any(|&v| half::quantize(v).to_bits() != v.to_bits() && !v.is_nan())
        {
            return Err(Error::PrecisionViolation(
                "binary16 set holds a value that is not binary16-representable".into(),
            ));
        }
        self.records.push(record);
        Ok(())
    }

    /// The same records with every vector rounded through binary16.
    pub fn quantized(&self) -> EmbeddingSet {
        let records = self
            .records
            .iter()
            .map(|r| Record {
                vector: r.vector.iter().map(|&v| half::quantize(v)).collect(),
                ..r.clone()
            })
            .collect();
        EmbeddingSet {
            dim: self.dim,
            precision: Precision::Binary16,
            records,
        }
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.role == role)
    }

    /// Vectors of one role stacked into `[count, dim]`, with their metadata.
    pub fn matrix(&self, role: Role) -> Result<(Tensor, Vec<Meta>)> {
        let mut data = Vec::new();
        let mut meta = Vec::new();
        for r in self.with_role(role) {
            data.extend_from_slice(&r.vector);
            meta.push(r.meta());
        }
        let t = Tensor::new(vec![meta.len(), self.dim], data, self.precision)?;
        Ok((t, meta))
    }
}
