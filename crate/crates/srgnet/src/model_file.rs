//! Trained-network files: a text header (format line, the `model.*`
//! settings, then one `tensor <name> <dims...>` line per parameter, then
//! `end`) followed by every tensor's values as little-endian f64, row-major,
//! in header order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use srgnet_core::config::RunConfig;
use srgnet_core::model::SrgNet;
use srgnet_core::nn::{ParamGroup, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &str = "srgnet-model 1";

pub fn encode(net: &SrgNet) -> Vec<u8> {
    let mut header = String::new();
    let _ = writeln!(header, "{MAGIC}");
    let run = RunConfig {
        model: net.config.clone(),
        ..RunConfig::default()
    };
    for (key, value) in run.entries() {
        if key.starts_with("model.") {
            let _ = writeln!(header, "config {key} = {value}");
        }
    }
    for (name, t) in net.params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(header, "tensor {name} {}", dims.join(" "));
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    for (_, t) in net.params.iter() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<SrgNet> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, line_no + 1, "header ends before `end`"))?;
        let line =
            std::str::from_utf8(&rest[..end]).map_err(|_| Error::parse(path, line_no + 1, "header is not UTF-8"))?;
        *pos += end + 1;
        line_no += 1;
        Ok((line_no, line.to_string()))
    };
    let (_, magic) = next_line(&mut pos)?;
    if magic != MAGIC {
        return Err(Error::parse(path, 1, format!("expected `{MAGIC}`, found `{magic}`")));
    }
    let mut run = RunConfig::default();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let (line, text) = next_line(&mut pos)?;
        if text == "end" {
            break;
        }
        if let Some(kv) = text.strip_prefix("config ") {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line, "config line lacks `=`"))?;
            if !k.trim().starts_with("model.") {
                return Err(Error::parse(path, line, format!("unexpected key `{}`", k.trim())));
            }
            run.set(k, v).map_err(|e| Error::parse(path, line, e.to_string()))?;
        } else if let Some(t) = text.strip_prefix("tensor ") {
            let mut f = t.split_whitespace();
            let name = f
                .next()
                .ok_or_else(|| Error::parse(path, line, "tensor line lacks a name"))?;
            let dims = f
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(path, line, "bad tensor dimension"))?;
            shapes.push((name.to_string(), dims));
        } else {
            return Err(Error::parse(path, line, format!("unrecognized header line `{text}`")));
        }
    }
    let body = &bytes[pos..];
    let total: usize = shapes.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    if body.len() != total * 8 {
        return Err(Error::parse(
            path,
            line_no,
            format!("expected {} bytes of tensor data, found {}", total * 8, body.len()),
        ));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = ParamGroup::new();
    for (name, dims) in &shapes {
        let len = dims.iter().product();
        let data: Vec<f64> = values.by_ref().take(len).collect();
        params.insert(name, Tensor::new(dims, data)?)?;
    }
    Ok(SrgNet::from_parts(run.model, params)?)
}

pub fn save(net: &SrgNet, path: &Path) -> Result<()> {
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SrgNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
