//! Precision partitioning, parameter-byte accounting and MAC counts over a
//! declarative layer list.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{ConvKind, ConvSpec};
use crate::tensor::Precision;

/// Bytes per reported megabyte.
pub const BYTES_PER_MB: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    Linear,
    BatchNorm,
    ReLU,
    AvgPool,
    ResidualAdd,
    Loss,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Conv,
        OpKind::DepthwiseConv,
        OpKind::PointwiseConv,
        OpKind::Linear,
        OpKind::BatchNorm,
        OpKind::ReLU,
        OpKind::AvgPool,
        OpKind::ResidualAdd,
        OpKind::Loss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Conv => "Conv",
            OpKind::DepthwiseConv => "DepthwiseConv",
            OpKind::PointwiseConv => "PointwiseConv",
            OpKind::Linear => "Linear",
            OpKind::BatchNorm => "BatchNorm",
            OpKind::ReLU => "ReLU",
            OpKind::AvgPool => "AvgPool",
            OpKind::ResidualAdd => "ResidualAdd",
            OpKind::Loss => "Loss",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidSpec(format!("unknown op kind `{}`", s.trim())))
    }

    /// Layers that never carry parameters.
    pub fn is_parameter_free(self) -> bool {
        matches!(self, OpKind::ReLU | OpKind::AvgPool | OpKind::ResidualAdd)
    }

    fn conv_kind(self) -> Option<ConvKind> {
        match self {
            OpKind::Conv => Some(ConvKind::Standard),
            OpKind::DepthwiseConv => Some(ConvKind::Depthwise),
            OpKind::PointwiseConv => Some(ConvKind::Pointwise),
            _ => None,
        }
    }

    /// Precision required by the partition rule.
    pub fn planned_precision(self) -> Precision {
        match self {
            OpKind::BatchNorm | OpKind::Loss => Precision::Binary32,
            _ => Precision::Binary16,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub op: OpKind,
    pub param_count: u64,
    pub conv: Option<ConvSpec>,
    pub out_hw: Option<(usize, usize)>,
}

impl LayerEntry {
    pub fn new(name: impl Into<String>, op: OpKind, param_count: u64) -> Self {
        LayerEntry {
            name: name.into(),
            op,
            param_count,
            conv: None,
            out_hw: None,
        }
    }

    pub fn with_conv(mut self, spec: ConvSpec, out_h: usize, out_w: usize) -> Self {
        self.conv = Some(spec);
        self.out_hw = Some((out_h, out_w));
        self
    }

    /// Multiply-accumulates of a convolution entry; zero for other layers.
    pub fn macs(&self) -> Result<u64> {
        match (self.conv, self.out_hw) {
            (Some(spec), Some((h, w))) => mac_count(&spec, h, w),
            _ => Ok(0),
        }
    }
}

/// Ordered, uniquely named layer list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    entries: Vec<LayerEntry>,
}

impl LayerManifest {
    pub fn new(entries: Vec<LayerEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate layer name `{}`",
                    e.name
                )));
            }
            if e.op.is_parameter_free() && e.param_count != 0 {
                return Err(Error::InvalidSpec(format!(
                    "{} layer `{}` cannot hold {} parameters",
                    e.op, e.name, e.param_count
                )));
            }
            if let Some(spec) = e.conv {
                spec.validate()?;
            }
        }
        Ok(LayerManifest { entries })
    }

    pub fn entries(&self) -> &[LayerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> u64 {
        self.entries.iter().map(|e| e.param_count).sum()
    }

    /// Parses `name,op_kind,param_count[,K,M,N,stride,out_h,out_w]` lines.
    /// Blank lines and `#` comments are skipped. Convolution padding is taken
    /// as `(K − 1) / 2`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| {
                Error::format("manifest", format!("line {}: {detail}", lineno + 1))
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 && fields.len() != 9 {
                return Err(bad(format!("expected 3 or 9 fields, got {}", fields.len())));
            }
            let op = OpKind::parse(fields[1])?;
            let num = |i: usize| -> Result<u64> {
                fields[i]
                    .parse::<u64>()
                    .map_err(|e| bad(format!("field {} `{}`: {e}", i + 1, fields[i])))
            };
            let mut entry = LayerEntry::new(fields[0], op, num(2)?);
            if fields[0].is_empty() {
                return Err(bad("empty layer name".into()));
            }
            if fields.len() == 9 {
                let kind = op
                    .conv_kind()
                    .ok_or_else(|| bad(format!("{op} rows take no convolution geometry")))?;
                let v: Vec<usize> = (3..9)
                    .map(|i| num(i).map(|x| x as usize))
                    .collect::<Result<_>>()?;
                let spec = ConvSpec {
                    kind,
                    kernel: v[0],
                    in_channels: v[1],
                    out_channels: v[2],
                    stride: v[3],
                    padding: v[0].saturating_sub(1) / 2,
                };
                entry = entry.with_conv(spec, v[4], v[5]);
            }
            entries.push(entry);
        }
        LayerManifest::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        LayerManifest::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# name,op_kind,param_count[,K,M,N,stride,out_h,out_w]\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}", e.name, e.op, e.param_count));
            if let (Some(s), Some((h, w))) = (e.conv, e.out_hw) {
                out.push_str(&format!(
                    ",{},{},{},{},{h},{w}",
                    s.kernel, s.in_channels, s.out_channels, s.stride
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn mac_total(&self) -> Result<u64> {
        self.entries.iter().map(LayerEntry::macs).sum()
    }
}

/// Layer name to storage precision, in manifest order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPlan {
    assignment: IndexMap<String, Precision>,
}

impl PrecisionPlan {
    pub fn new() -> Self {
        PrecisionPlan::default()
    }

    /// Every layer of `manifest` stored in `mode`, ignoring the partition rule.
    pub fn uniform(manifest: &LayerManifest, mode: Precision) -> Self {
        PrecisionPlan {
            assignment: manifest
                .entries
                .iter()
                .map(|e| (e.name.clone(), mode))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mode: Precision) {
        self.assignment.insert(name.into(), mode);
    }

    pub fn get(&self, name: &str) -> Option<Precision> {
        self.assignment.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Precision)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Checks that the plan covers `manifest` exactly and keeps batch norm and
    /// loss in binary32.
    pub fn validate(&self, manifest: &LayerManifest) -> Result<()> {
        for e in &manifest.entries {
            let mode = self.get(&e.name).ok_or_else(|| {
                Error::InvalidSpec(format!("plan does not cover layer `{}`", e.name))
            })?;
            if e.op.planned_precision() == Precision::Binary32 && mode != Precision::Binary32 {
                return Err(Error::PrecisionViolation(format!(
                    "{} layer `{}` must stay binary32",
                    e.op, e.name
                )));
            }
        }
        if self.len() != manifest.len() {
            let extra = self
                .assignment
                .keys()
                .find(|k| !manifest.entries.iter().any(|e| &e.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::InvalidSpec(format!(
                "plan names unknown layer `{extra}`"
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = PrecisionPlan::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, mode) = line.split_once(',').ok_or_else(|| {
                Error::format(
                    "plan",
                    format!("line {}: expected `name,precision`", lineno + 1),
                )
            })?;
            let name = name.trim();
            if plan.assignment.contains_key(name) {
                return Err(Error::format(
                    "plan",
                    format!("line {}: duplicate layer `{name}`", lineno + 1),
                ));
            }
            plan.insert(name, Precision::parse(mode)?);
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PrecisionPlan::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(n, m)| format!("{n},{m}\n")).collect()
    }
}

/// Binary16 for convolutions, linear layers and parameter-free layers;
/// binary32 for batch norm and loss.
pub fn partition(manifest: &LayerManifest) -> PrecisionPlan {
    PrecisionPlan {
        assignment: manifest
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.op.planned_precision()))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub total_bytes: u64,
    pub per_layer: Vec<(String, u64)>,
}

impl SizeReport {
    pub fn megabytes(&self) -> f64 {
        self.total_bytes as f64 / BYTES_PER_MB
    }
}

/// Parameter storage: 2 bytes per binary16 parameter, 4 per binary32.
pub fn model_size_bytes(manifest: &LayerManifest, plan: &PrecisionPlan) -> Result<SizeReport> {
    let mut per_layer = Vec::with_capacity(manifest.len());
    let mut total = 0u64;
    for e in &manifest.entries {
        let mode = plan
            .get(&e.name)
            .ok_or_else(|| Error::InvalidSpec(format!("plan does not cover layer `{}`", e.name)))?;
        let bytes = e.param_count * mode.bytes_per_element() as u64;
        total += bytes;
        per_layer.push((e.name.clone(), bytes));
    }
    Ok(SizeReport {
        total_bytes: total,
        per_layer,
    })
}

/// Multiply-accumulates of one convolution producing an `out_h × out_w` map.
pub fn mac_count(spec: &ConvSpec, out_h: usize, out_w: usize) -> Result<u64> {
    spec.validate()?;
    let (k, m, n) = (
        spec.kernel as u64,
        spec.in_channels as u64,
        spec.out_channels as u64,
    );
    let hw = out_h as u64 * out_w as u64;
    Ok(match spec.kind {
        ConvKind::Standard => k * k * m * n * hw,
        ConvKind::Depthwise => k * k * m * hw,
        ConvKind::Pointwise => m * n * hw,
    })
}

/// MACs of a K×K depthwise convolution followed by an M→N pointwise one.
pub fn separable_mac_count(
    kernel: usize,
    m: usize,
    n: usize,
    out_h: usize,
    out_w: usize,
) -> Result<u64> {
    Ok(mac_count(&ConvSpec::depthwise(kernel, m), out_h, out_w)?
        + mac_count(&ConvSpec::pointwise(m, n), out_h, out_w)?)
}
