//! Message vocabulary and its wire format.
//!
//! ```text
//! u8  variant tag (0 IntermediateBatch, 1 ServerOutput, 2 OutputGradient,
//!                  3 Control, 4 CutGradient)
//! u32 client_id
//! tensor  := u32 rows, u32 cols, rows*cols f64 (row-major)
//! labels  := u8 mode (0 absent, 1 raw, 2 anonymized), u32 count, count u32
//! IntermediateBatch: tensor labels
//! ServerOutput / OutputGradient / CutGradient: tensor u64 batch_tag
//! Control: u8 kind (0 BeginUnlearn, 1 Done)
//! ```
//! Little-endian throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Absent,
    Raw(Vec<usize>),
    Anonymized(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Absent,
    Raw,
    Anonymized,
}

impl Labels {
    pub fn kind(&self) -> LabelKind {
        match self {
            Labels::Absent => LabelKind::Absent,
            Labels::Raw(_) => LabelKind::Raw,
            Labels::Anonymized(_) => LabelKind::Anonymized,
        }
    }

    pub fn values(&self) -> Option<&[usize]> {
        match self {
            Labels::Absent => None,
            Labels::Raw(v) | Labels::Anonymized(v) => Some(v),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Labels::Absent => 0,
            Labels::Raw(_) => 1,
            Labels::Anonymized(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    BeginUnlearn,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Cut-layer activations `T`, optionally with labels.
    IntermediateBatch {
        client_id: u32,
        activations: Tensor,
        labels: Labels,
    },
    /// Server logits for a client to score against private labels.
    ServerOutput {
        client_id: u32,
        logits: Tensor,
        batch_tag: u64,
    },
    /// Loss gradient w.r.t. a matching `ServerOutput`.
    OutputGradient {
        client_id: u32,
        dlogits: Tensor,
        batch_tag: u64,
    },
    /// Gradient `G` at the server's first layer, returned to a client
    /// during interactive split training.
    CutGradient {
        client_id: u32,
        grad: Tensor,
        batch_tag: u64,
    },
    Control {
        kind: ControlKind,
        client_id: u32,
    },
}

impl Message {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Message::IntermediateBatch { .. } => "IntermediateBatch",
            Message::ServerOutput { .. } => "ServerOutput",
            Message::OutputGradient { .. } => "OutputGradient",
            Message::CutGradient { .. } => "CutGradient",
            Message::Control { .. } => "Control",
        }
    }

    pub fn client_id(&self) -> u32 {
        match self {
            Message::IntermediateBatch { client_id, .. }
            | Message::ServerOutput { client_id, .. }
            | Message::OutputGradient { client_id, .. }
            | Message::CutGradient { client_id, .. }
            | Message::Control { client_id, .. } => *client_id,
        }
    }

    pub fn label_kind(&self) -> Option<LabelKind> {
        match self {
            Message::IntermediateBatch { labels, .. } => Some(labels.kind()),
            _ => None,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Message::IntermediateBatch { .. } => 0,
            Message::ServerOutput { .. } => 1,
            Message::OutputGradient { .. } => 2,
            Message::Control { .. } => 3,
            Message::CutGradient { .. } => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Message::IntermediateBatch { activations, labels, .. } = self {
            if let Some(v) = labels.values() {
                if v.len() != activations.rows() {
                    return Err(Error::Protocol(format!(
                        "{} labels for {} activation rows",
                        v.len(),
                        activations.rows()
                    )));
                }
                if v.iter().any(|&y| y > u32::MAX as usize) {
                    return Err(Error::Protocol("label does not fit in u32".into()));
                }
            }
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        const HEADER: usize = 1 + 4;
        let tensor = |t: &Tensor| 8 + 8 * t.rows() * t.cols();
        HEADER
            + match self {
                Message::IntermediateBatch { activations, labels, .. } => {
                    tensor(activations) + 1 + 4 + 4 * labels.values().map_or(0, <[usize]>::len)
                }
                Message::ServerOutput { logits: t, .. }
                | Message::OutputGradient { dlogits: t, .. }
                | Message::CutGradient { grad: t, .. } => tensor(t) + 8,
                Message::Control { .. } => 1,
            }
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.tag());
        out.extend_from_slice(&self.client_id().to_le_bytes());
        match self {
            Message::IntermediateBatch { activations, labels, .. } => {
                put_tensor(&mut out, activations);
                out.push(labels.code());
                let v = labels.values().unwrap_or(&[]);
                out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                for &y in v {
                    out.extend_from_slice(&(y as u32).to_le_bytes());
                }
            }
            Message::ServerOutput { logits: t, batch_tag, .. }
            | Message::OutputGradient { dlogits: t, batch_tag, .. }
            | Message::CutGradient { grad: t, batch_tag, .. } => {
                put_tensor(&mut out, t);
                out.extend_from_slice(&batch_tag.to_le_bytes());
            }
            Message::Control { kind, .. } => out.push(match kind {
                ControlKind::BeginUnlearn => 0,
                ControlKind::Done => 1,
            }),
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        Ok(out)
    }

    pub fn deserialize(buf: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf, pos: 0 };
        let tag = r.u8()?;
        let client_id = r.u32()?;
        let msg = match tag {
            0 => {
                let activations = r.tensor()?;
                let mode = r.u8()?;
                let count = r.u32()? as usize;
                if count.saturating_mul(4) > r.remaining() {
                    return Err(wire("label count exceeds payload"));
                }
                let values = (0..count).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
                let labels = match (mode, count) {
                    (0, 0) => Labels::Absent,
                    (0, _) => return Err(wire("absent labels with nonzero count")),
                    (1, _) => Labels::Raw(values),
                    (2, _) => Labels::Anonymized(values),
                    _ => return Err(wire("unknown label mode")),
                };
                Message::IntermediateBatch { client_id, activations, labels }
            }
            1 | 2 | 4 => {
                let t = r.tensor()?;
                let batch_tag = r.u64()?;
                match tag {
                    1 => Message::ServerOutput { client_id, logits: t, batch_tag },
                    2 => Message::OutputGradient { client_id, dlogits: t, batch_tag },
                    _ => Message::CutGradient { client_id, grad: t, batch_tag },
                }
            }
            3 => Message::Control {
                client_id,
                kind: match r.u8()? {
                    0 => ControlKind::BeginUnlearn,
                    1 => ControlKind::Done,
                    _ => return Err(wire("unknown control kind")),
                },
            },
            _ => return Err(wire("unknown variant tag")),
        };
        if r.remaining() != 0 {
            return Err(wire("trailing bytes"));
        }
        msg.validate()?;
        Ok(msg)
    }
}

fn wire(msg: &str) -> Error {
    Error::Protocol(format!("malformed message: {msg}"))
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.remaining() {
            return Err(wire("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| wire("tensor size overflow"))?;
        if n.saturating_mul(8) > self.remaining() {
            return Err(wire("tensor exceeds payload"));
        }
        let data = (0..n)
            .map(|_| self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8"))))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_label_batch_size() {
        let msg =
            Message::IntermediateBatch { client_id: 3, activations: Tensor::zeros(8, 16), labels: Labels::Absent };
        assert_eq!(msg.serialize().unwrap().len(), 1042);
        assert_eq!(msg.encoded_len(), 1042);
    }

    #[test]
    fn mismatched_labels_rejected() {
        let msg = Message::IntermediateBatch {
            client_id: 0,
            activations: Tensor::zeros(3, 2),
            labels: Labels::Raw(vec![0, 1]),
        };
        assert!(matches!(msg.serialize(), Err(Error::Protocol(_))));
    }

    #[test]
    fn control_and_gradient_round_trip() {
        for msg in [
            Message::Control { kind: ControlKind::BeginUnlearn, client_id: 9 },
            Message::CutGradient {
                client_id: 1,
                grad: Tensor::from_vec(1, 2, vec![0.5, -0.25]).unwrap(),
                batch_tag: 77,
            },
        ] {
            assert_eq!(Message::deserialize(&msg.serialize().unwrap()).unwrap(), msg);
        }
    }

    #[test]
    fn garbage_rejected() {
        assert!(Message::deserialize(&[]).is_err());
        assert!(Message::deserialize(&[9, 0, 0, 0, 0]).is_err());
        let mut ok = Message::Control { kind: ControlKind::Done, client_id: 0 }.serialize().unwrap();
        ok.push(0);
        assert!(Message::deserialize(&ok).is_err());
    }
}
