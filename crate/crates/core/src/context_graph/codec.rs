//! Binary graph file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        8 bytes  "ACBGRAPH"
//! version      u32
//! node_count   u32
//! node records (BFS order, root first):
//!   token      u32      (u32::MAX for the root)
//!   parent     u32      (u32::MAX for the root)
//!   arc_cost   f64
//!   fail       u32
//!   output     u32      (u32::MAX when absent)
//!   flags      u8       bit 0: an entry ends here
//!   if flags & 1:
//!     entry arc_cost   f64
//!     entry_cost       f64
//!     provenance       u8
//!     surface_len      u32
//!     surface          surface_len bytes, UTF-8
//! checksum     u32      CRC-32 of every preceding byte
//! ```
//!
//! Decoding rebuilds the automaton from the stored entries and rejects the
//! file unless the rebuilt links and arc costs match the stored ones.

use super::{ContextEntry, ContextGraph, GraphError, Provenance, NONE};

pub const MAGIC: &[u8; 8] = b"ACBGRAPH";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 4;

pub(super) fn encode(graph: &ContextGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + graph.nodes.len() * 32 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(graph.nodes.len() as u32).to_le_bytes());
    for node in &graph.nodes {
        out.extend_from_slice(&node.token.to_le_bytes());
        out.extend_from_slice(&node.parent.to_le_bytes());
        out.extend_from_slice(&node.arc_cost.to_le_bytes());
        out.extend_from_slice(&node.fail.to_le_bytes());
        out.extend_from_slice(&node.output.to_le_bytes());
        match node.entry() {
            None => out.push(0),
            Some(idx) => {
                let e = &graph.entries[idx];
                out.push(1);
                out.extend_from_slice(&e.arc_cost.to_le_bytes());
                out.extend_from_slice(&e.entry_cost.to_le_bytes());
                out.push(e.provenance.code());
                out.extend_from_slice(&(e.surface.len() as u32).to_le_bytes());
                out.extend_from_slice(e.surface.as_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let end = self.pos.checked_add(n).ok_or(GraphError::Truncated)?;
        let slice = self.buf.get(self.pos..end).ok_or(GraphError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, GraphError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Record {
    token: u32,
    parent: u32,
    arc_cost: f64,
    fail: u32,
    output: u32,
}

pub(super) fn decode(bytes: &[u8]) -> Result<ContextGraph, GraphError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(GraphError::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(GraphError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(GraphError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(GraphError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(GraphError::Corrupt("graph has no root".into()));
    }

    let mut records: Vec<Record> = Vec::new();
    let mut paths: Vec<Vec<u32>> = Vec::new();
    let mut entries = Vec::new();
    for id in 0..count {
        let rec = Record {
            token: r.u32()?,
            parent: r.u32()?,
            arc_cost: r.f64()?,
            fail: r.u32()?,
            output: r.u32()?,
        };
        let path = if id == 0 {
            if rec.parent != NONE || rec.token != NONE {
                return Err(GraphError::Corrupt("bad root record".into()));
            }
            Vec::new()
        } else {
            let parent = rec.parent as usize;
            if parent >= id {
                return Err(GraphError::Corrupt(format!(
                    "node {id} has parent {parent} out of BFS order"
                )));
            }
            let mut p = paths[parent].clone();
            p.push(rec.token);
            p
        };
        let flags = r.u8()?;
        match flags {
            0 => {}
            1 => {
                let arc_cost = r.f64()?;
                let entry_cost = r.f64()?;
                let provenance = Provenance::from_code(r.u8()?)
                    .ok_or_else(|| GraphError::Corrupt(format!("node {id}: bad provenance")))?;
                let len = r.u32()? as usize;
                let surface = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| GraphError::Corrupt(format!("node {id}: surface not UTF-8")))?;
                let entry = ContextEntry::new(path.clone(), arc_cost, provenance, surface)
                    .map_err(|e| GraphError::Corrupt(format!("node {id}: {e}")))?;
                if entry.entry_cost.to_bits() != entry_cost.to_bits() {
                    return Err(GraphError::Corrupt(format!(
                        "node {id}: entry cost inconsistent with arc cost"
                    )));
                }
                entries.push(entry);
            }
            other => {
                return Err(GraphError::Corrupt(format!(
                    "node {id}: unknown flags {other:#x}"
                )))
            }
        }
        records.push(rec);
        paths.push(path);
    }
    if r.pos != body.len() {
        return Err(GraphError::Corrupt("trailing bytes after node records".into()));
    }

    let graph = ContextGraph::build(entries)?;
    let consistent = graph.nodes.len() == records.len()
        && graph.nodes.iter().zip(&records).all(|(n, rec)| {
            n.token == rec.token
                && n.parent == rec.parent
                && n.arc_cost.to_bits() == rec.arc_cost.to_bits()
                && n.fail == rec.fail
                && n.output == rec.output
        });
    if !consistent {
        return Err(GraphError::Corrupt(
            "stored nodes disagree with the automaton rebuilt from their entries".into(),
        ));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ContextGraph {
        let e = |t: &[u32], c: f64, s: &str| {
            ContextEntry::new(t.to_vec(), c, Provenance::KeywordInLm, s).unwrap()
        };
        ContextGraph::build(vec![
            e(&[1, 2, 3], 1.25, "one two three"),
            e(&[2, 3], 0.5, "two three"),
            e(&[7], 1.5, "seven"),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let g = sample();
        let bytes = g.to_bytes();
        let back = ContextGraph::from_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn empty_graph_layout() {
        let bytes = ContextGraph::empty().to_bytes();
        // header + one 25-byte root record + checksum
        assert_eq!(bytes.len(), HEADER_LEN + 25 + 4);
        assert_eq!(&bytes[..8], MAGIC);
        assert!(ContextGraph::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn corrupted_length_field_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[12] ^= 0x01; // node_count
        assert!(matches!(
            ContextGraph::from_bytes(&bytes),
            Err(GraphError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn consistent_checksum_but_bad_count_is_bounds_error() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 4);
        bytes[12] += 1;
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(ContextGraph::from_bytes(&bytes), Err(GraphError::Truncated));
    }

    #[test]
    fn tampered_links_are_rejected() {
        let g = sample();
        let mut bytes = g.to_bytes();
        bytes.truncate(bytes.len() - 4);
        // fail field of node 1 sits after header, root record, token, parent, arc cost.
        let off = HEADER_LEN + 25 + 4 + 4 + 8;
        bytes[off] = 2;
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            ContextGraph::from_bytes(&bytes),
            Err(GraphError::Corrupt(_))
        ));
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert_eq!(ContextGraph::from_bytes(&bytes), Err(GraphError::BadMagic));

        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 4);
        bytes[8] = 9;
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(
            ContextGraph::from_bytes(&bytes),
            Err(GraphError::UnsupportedVersion(9))
        );
        assert_eq!(ContextGraph::from_bytes(&[1, 2]), Err(GraphError::Truncated));
    }
}
