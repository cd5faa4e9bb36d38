//! Binary rig file.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "CCHRIG\0\0"
//! version      u32      RIG_VERSION
//! joints K     u32
//! vertices V   u32
//! shapes S     u32
//! K × joint:
//!   name_len u32, name (UTF-8)
//!   parent   i32 (-1 for the root)
//!   joint    3 × f64
//!   box_min  3 × f64, box_max 3 × f64
//!   cap_a    3 × f64, cap_b 3 × f64, radius f64
//! V × vertex:
//!   position   3 × f64
//!   weights    K × f64
//!   pose_joint u32
//!   pose_basis 27 × f64   (3 × 9, row-major)
//! S × V × shape offset: 3 × f64
//! ```

use std::fs;
use std::path::Path;

use super::rig::{Aabb, BodyRig, Capsule};
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const RIG_MAGIC: &[u8; 8] = b"CCHRIG\0\0";
pub const RIG_VERSION: u32 = 1;

pub fn write_rig(rig: &BodyRig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RIG_MAGIC);
    put_u32(&mut out, RIG_VERSION);
    put_u32(&mut out, rig.joint_count() as u32);
    put_u32(&mut out, rig.vertex_count() as u32);
    put_u32(&mut out, rig.shape_count() as u32);
    for j in 0..rig.joint_count() {
        let name = rig.names[j].as_bytes();
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name);
        out.extend_from_slice(&rig.parents[j].map_or(-1, |p| p as i32).to_le_bytes());
        put_vec3(&mut out, rig.joints[j]);
        put_vec3(&mut out, rig.boxes[j].min);
        put_vec3(&mut out, rig.boxes[j].max);
        put_vec3(&mut out, rig.capsules[j].a);
        put_vec3(&mut out, rig.capsules[j].b);
        put_f64(&mut out, rig.capsules[j].radius);
    }
    for v in 0..rig.vertex_count() {
        put_vec3(&mut out, rig.vertices[v]);
        rig.vertex_weights(v).iter().for_each(|w| put_f64(&mut out, *w));
        put_u32(&mut out, rig.pose_joint[v] as u32);
        rig.pose_basis[v].iter().for_each(|w| put_f64(&mut out, *w));
    }
    for basis in &rig.shape_basis {
        basis.iter().for_each(|o| put_vec3(&mut out, *o));
    }
    out
}

pub fn read_rig(bytes: &[u8]) -> Result<BodyRig> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != RIG_MAGIC {
        return Err(Error::format("not a rig file (bad magic)"));
    }
    let version = r.u32()?;
    if version != RIG_VERSION {
        return Err(Error::Version {
            expected: RIG_VERSION,
            found: version,
        });
    }
    let k = r.u32()? as usize;
    let v = r.u32()? as usize;
    let s = r.u32()? as usize;
    let mut rig = BodyRig {
        names: Vec::with_capacity(k),
        joints: Vec::with_capacity(k),
        parents: Vec::with_capacity(k),
        boxes: Vec::with_capacity(k),
        capsules: Vec::with_capacity(k),
        vertices: Vec::with_capacity(v),
        weights: Vec::with_capacity(v * k),
        shape_basis: Vec::with_capacity(s),
        pose_joint: Vec::with_capacity(v),
        pose_basis: Vec::with_capacity(v),
    };
    for _ in 0..k {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("joint name is not UTF-8"))?;
        rig.names.push(name.to_string());
        let parent = i32::from_le_bytes(r.take(4)?.try_into().unwrap());
        rig.parents.push(if parent < 0 { None } else { Some(parent as usize) });
        rig.joints.push(r.vec3()?);
        let (min, max) = (r.vec3()?, r.vec3()?);
        rig.boxes.push(Aabb { min, max });
        let (a, b, radius) = (r.vec3()?, r.vec3()?, r.f64()?);
        rig.capsules.push(Capsule { a, b, radius });
    }
    for _ in 0..v {
        rig.vertices.push(r.vec3()?);
        for _ in 0..k {
            rig.weights.push(r.f64()?);
        }
        rig.pose_joint.push(r.u32()? as usize);
        let mut basis = [0.0; 27];
        for b in basis.iter_mut() {
            *b = r.f64()?;
        }
        rig.pose_basis.push(basis);
    }
    for _ in 0..s {
        let mut basis = Vec::with_capacity(v);
        for _ in 0..v {
            basis.push(r.vec3()?);
        }
        rig.shape_basis.push(basis);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after rig data"));
    }
    rig.validate()?;
    Ok(rig)
}

pub fn save_rig(rig: &BodyRig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_rig(rig))?;
    Ok(())
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<BodyRig> {
    read_rig(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: Vec3) {
    v.0.iter().for_each(|x| put_f64(out, *x));
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("rig file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3([self.f64()?, self.f64()?, self.f64()?]))
    }
}
