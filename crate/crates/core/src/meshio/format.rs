//! Binary `HSM1` / `HST1` and text waveform encodings. All integers and
//! floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Mesh, NodeType, Trajectory, Waveform};
use crate::error::{Error, Result};

pub const MESH_MAGIC: &[u8; 4] = b"HSM1";
pub const TRAJ_MAGIC: &[u8; 4] = b"HST1";

/// Byte cursor that reports the offset of every decoding failure.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos,
                format!("truncated payload reading {what}: need {n} bytes, have {}", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(Error::format(
                at,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expect),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    /// Reads a count and checks that `count * elem_bytes` more bytes exist.
    pub(crate) fn count(&mut self, what: &str, elem_bytes: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64(what)?;
        let need = (n as u128) * (elem_bytes as u128);
        if need > self.remaining() as u128 {
            return Err(Error::format(
                at,
                format!("{what} = {n} exceeds remaining payload of {} bytes", self.remaining()),
            ));
        }
        Ok(n as usize)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes after payload", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub fn write_mesh<W: Write>(mesh: &Mesh, w: &mut W) -> Result<()> {
    let n = mesh.num_nodes();
    let mut buf = Vec::with_capacity(20 + n * 64 + mesh.tets.len() * 32);
    buf.extend_from_slice(MESH_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(mesh.tets.len() as u64).to_le_bytes());
    for p in &mesh.positions {
        for c in p {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.tets {
        for &v in t {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
    }
    buf.extend(mesh.node_type.iter().map(|t| t.code()));
    for d in &mesh.inlet_distance {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for nrm in &mesh.wall_normals {
        for c in nrm {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mesh(bytes: &[u8]) -> Result<Mesh> {
    let mut cur = Cursor::new(bytes);
    cur.magic(MESH_MAGIC)?;
    let n = cur.count("node count", 24 + 1 + 8 + 24)?;
    let m = cur.count("tet count", 0)?;
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        positions.push([cur.f64("position")?, cur.f64("position")?, cur.f64("position")?]);
    }
    if (m as u128) * 32 > cur.remaining() as u128 {
        return Err(Error::format(cur.offset(), format!("tet count {m} exceeds payload")));
    }
    let mut tets = Vec::with_capacity(m);
    for _ in 0..m {
        let mut t = [0usize; 4];
        for slot in &mut t {
            let at = cur.offset();
            let v = cur.u64("tet index")?;
            if v >= n as u64 {
                return Err(Error::format(at, format!("tet index {v} out of range for {n} nodes")));
            }
            *slot = v as usize;
        }
        tets.push(t);
    }
    let mut node_type = Vec::with_capacity(n);
    for _ in 0..n {
        let at = cur.offset();
        let code = cur.u8("node type")?;
        node_type.push(
            NodeType::from_code(code)
                .ok_or_else(|| Error::format(at, format!("unknown node type code {code}")))?,
        );
    }
    let mut inlet_distance = Vec::with_capacity(n);
    for _ in 0..n {
        inlet_distance.push(cur.f64("inlet distance")?);
    }
    let mut wall_normals = Vec::with_capacity(n);
    for _ in 0..n {
        wall_normals.push([cur.f64("normal")?, cur.f64("normal")?, cur.f64("normal")?]);
    }
    cur.finish()?;
    Ok(Mesh {
        positions,
        tets,
        node_type,
        inlet_distance,
        wall_normals,
    })
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, w: &mut W) -> Result<()> {
    let mut buf = Vec::with_capacity(52 + traj.velocity.len() * 4);
    buf.extend_from_slice(TRAJ_MAGIC);
    buf.extend_from_slice(&traj.mesh_hash);
    buf.extend_from_slice(&traj.dt.to_le_bytes());
    buf.extend_from_slice(&(traj.num_steps() as u64).to_le_bytes());
    for v in &traj.velocity {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Decodes a trajectory. The node count is not stored; it is inferred from
/// the payload length unless `num_nodes` pins it (needed for empty payloads).
pub fn read_trajectory(bytes: &[u8], num_nodes: Option<usize>) -> Result<Trajectory> {
    let mut cur = Cursor::new(bytes);
    cur.magic(TRAJ_MAGIC)?;
    let hash: [u8; 32] = cur.take(32, "mesh hash")?.try_into().unwrap();
    let dt = cur.f64("dt")?;
    let steps_at = cur.offset();
    let steps = cur.u64("step count")? as usize;
    let body = cur.remaining();
    let nodes = match (num_nodes, steps) {
        (Some(n), _) => n,
        (None, 0) => 0,
        (None, s) => {
            if body % (s * 12) != 0 {
                return Err(Error::format(
                    cur.offset(),
                    format!("payload of {body} bytes is not a whole number of {s} frames"),
                ));
            }
            body / (s * 12)
        }
    };
    let expect = (steps as u128) * (nodes as u128) * 12;
    if expect != body as u128 {
        return Err(Error::format(
            steps_at,
            format!("{steps} steps x {nodes} nodes needs {expect} bytes, payload has {body}"),
        ));
    }
    let mut velocity = Vec::with_capacity(steps * nodes * 3);
    for _ in 0..steps * nodes * 3 {
        velocity.push(cur.f32("velocity")?);
    }
    cur.finish()?;
    Ok(Trajectory {
        mesh_hash: hash,
        dt,
        num_nodes: nodes,
        velocity,
    })
}

/// Text encoding: `period <seconds>` then one `t q` pair per line. Values use
/// the shortest round-tripping decimal form so save/load is exact.
pub fn write_waveform<W: Write>(wave: &Waveform, w: &mut W) -> Result<()> {
    writeln!(w, "period {:?}", wave.period)?;
    for (t, q) in &wave.samples {
        writeln!(w, "{t:?} {q:?}")?;
    }
    Ok(())
}

pub fn read_waveform(text: &str) -> Result<Waveform> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(0, "empty waveform file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("period") {
        return Err(Error::format(0, "waveform header must start with `period`"));
    }
    let period: f64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(0, "unparseable period"))?;
    // Offsets for the text format are byte offsets of the offending line.
    let line_offsets: Vec<usize> = std::iter::once(0)
        .chain(text.match_indices('\n').map(|(i, _)| i + 1))
        .collect();
    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let at = line_offsets.get(lineno).copied().unwrap_or(0);
        let mut it = line.split_whitespace();
        let t: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(at, format!("bad time on line {}", lineno + 1)))?;
        let q: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(at, format!("bad flow on line {}", lineno + 1)))?;
        if it.next().is_some() {
            return Err(Error::format(at, format!("extra tokens on line {}", lineno + 1)));
        }
        samples.push((t, q));
    }
    Waveform::new(period, samples)
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_mesh(mesh, &mut f)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    read_mesh(&fs::read(path)?)
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_trajectory(traj, &mut f)
}

pub fn load_trajectory(path: impl AsRef<Path>, num_nodes: Option<usize>) -> Result<Trajectory> {
    read_trajectory(&fs::read(path)?, num_nodes)
}

pub fn save_waveform(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_waveform(wave, &mut f)
}

pub fn load_waveform(path: impl AsRef<Path>) -> Result<Waveform> {
    read_waveform(&fs::read_to_string(path)?)
}
