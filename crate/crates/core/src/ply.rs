//! Binary little-endian PLY in the layout written by reference 3DGS
//! trainers: `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2
//! rot_0..3`, all `float`.
//!
//! `f_rest` is channel-major: `f_rest_{c*15 + j}` holds coefficient `j + 1`
//! of channel `c`. Normals are written as zeros and ignored on load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, SH_COEFFS};

const REST_PER_CHANNEL: usize = SH_COEFFS - 1;

/// Property names in file order.
pub fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).into();
    names.extend((0..3).map(|c| format!("f_dc_{c}")));
    names.extend((0..3 * REST_PER_CHANNEL).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

pub fn header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for name in property_names() {
        h.push_str(&format!("property float {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

fn vertex_values(cloud: &GaussianCloud, i: usize) -> Vec<f32> {
    let mut v = Vec::with_capacity(62);
    v.extend(cloud.positions[i].map(|x| x as f32));
    v.extend([0.0f32; 3]);
    let sh = &cloud.sh_coeffs[i];
    v.extend(sh[0].map(|x| x as f32));
    for c in 0..3 {
        v.extend((1..SH_COEFFS).map(|k| sh[k][c] as f32));
    }
    v.push(cloud.opacity_logits[i] as f32);
    v.extend(cloud.log_scales[i].map(|x| x as f32));
    v.extend(cloud.rotations[i].map(|x| x as f32));
    v
}

pub fn encode_ply(cloud: &GaussianCloud) -> Result<Vec<u8>> {
    cloud.validate()?;
    let head = header(cloud.len());
    let mut out = Vec::with_capacity(head.len() + cloud.len() * 62 * 4);
    out.extend_from_slice(head.as_bytes());
    for i in 0..cloud.len() {
        for x in vertex_values(cloud, i) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ply(cloud)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    decode_ply(&fs::read(path)?)
}

struct Header {
    count: usize,
    properties: Vec<String>,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::ply("end_header", "header terminator not found"))?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::ply("header", "header is not valid UTF-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::ply("ply", "missing magic line"));
    }

    let mut count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::ply("format", format!("unsupported format `{fmt}`")));
                }
            }
            ["element", "vertex", n] => {
                let n = n
                    .parse()
                    .map_err(|_| Error::ply("element vertex", format!("bad count `{n}`")))?;
                count = Some(n);
                in_vertex = true;
            }
            ["element", name, ..] => {
                return Err(Error::ply(*name, "only a single vertex element is supported"));
            }
            ["property", ty, name] if in_vertex => {
                if !matches!(*ty, "float" | "float32") {
                    return Err(Error::ply(*name, format!("unsupported property type `{ty}`")));
                }
                properties.push(name.to_string());
            }
            _ => return Err(Error::ply(line.trim(), "unrecognized header line")),
        }
    }
    let count = count.ok_or_else(|| Error::ply("element vertex", "missing vertex element"))?;
    Ok(Header {
        count,
        properties,
        payload_offset: end + END.len(),
    })
}

pub fn decode_ply(bytes: &[u8]) -> Result<GaussianCloud> {
    let header = parse_header(bytes)?;
    let column = |name: &str| -> Result<usize> {
        header
            .properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::ply(name, "missing property"))
    };

    let pos = [column("x")?, column("y")?, column("z")?];
    let dc = [column("f_dc_0")?, column("f_dc_1")?, column("f_dc_2")?];
    let rest = (0..3 * REST_PER_CHANNEL)
        .map(|i| column(&format!("f_rest_{i}")))
        .collect::<Result<Vec<_>>>()?;
    let opacity = column("opacity")?;
    let scale = [column("scale_0")?, column("scale_1")?, column("scale_2")?];
    let rot = [column("rot_0")?, column("rot_1")?, column("rot_2")?, column("rot_3")?];

    let stride = header.properties.len() * 4;
    let payload = &bytes[header.payload_offset..];
    let needed = header.count * stride;
    if payload.len() < needed {
        let vertex = payload.len() / stride.max(1);
        let prop = (payload.len() % stride.max(1)) / 4;
        let name = header.properties.get(prop).cloned().unwrap_or_default();
        return Err(Error::ply(
            name,
            format!(
                "truncated payload: vertex {vertex} of {} (have {} of {needed} bytes)",
                header.count,
                payload.len()
            ),
        ));
    }

    let mut cloud = GaussianCloud::with_len(header.count);
    for i in 0..header.count {
        let row = &payload[i * stride..(i + 1) * stride];
        let get = |col: usize| f32::from_le_bytes(row[col * 4..col * 4 + 4].try_into().unwrap()) as f64;
        cloud.positions[i] = pos.map(get);
        cloud.log_scales[i] = scale.map(get);
        cloud.rotations[i] = rot.map(get);
        cloud.opacity_logits[i] = get(opacity);
        let sh = &mut cloud.sh_coeffs[i];
        sh[0] = dc.map(get);
        for c in 0..3 {
            for j in 0..REST_PER_CHANNEL {
                sh[j + 1][c] = get(rest[c * REST_PER_CHANNEL + j]);
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud_has_zero_vertices() {
        let bytes = encode_ply(&GaussianCloud::default()).unwrap();
        assert!(std::str::from_utf8(&bytes).unwrap().contains("element vertex 0\n"));
        assert!(decode_ply(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_identity_vertex() {
        let mut bytes = header(1).into_bytes();
        for name in property_names() {
            let v: f32 = if name == "rot_0" { 1.0 } else { 0.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = decode_ply(&bytes).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.rotations[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cloud.positions[0], [0.0; 3]);
    }

    #[test]
    fn missing_property_is_named() {
        let text = header(0).replace("property float scale_1\n", "");
        match decode_ply(text.as_bytes()) {
            Err(Error::Ply { property, .. }) => assert_eq!(property, "scale_1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_property() {
        let mut bytes = header(2).into_bytes();
        bytes.extend(std::iter::repeat(0u8).take(62 * 4 + 7 * 4 + 2));
        match decode_ply(&bytes) {
            Err(Error::Ply { property, message }) => {
                assert_eq!(property, "f_dc_1");
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header() {
        assert!(decode_ply(b"ply\nformat ascii 1.0\nend_header\n").is_err());
        assert!(decode_ply(b"not a ply").is_err());
    }

    #[test]
    fn channel_major_rest_layout() {
        let mut cloud = GaussianCloud::with_len(1);
        cloud.sh_coeffs[0][1][2] = 7.0;
        let bytes = encode_ply(&cloud).unwrap();
        let off = header(1).len() + 4 * property_names().iter().position(|n| n == "f_rest_30").unwrap();
        assert_eq!(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()), 7.0);
    }
}
