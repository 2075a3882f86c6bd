//! JSON writing with a choice of float rendering.
//!
//! [`FloatStyle::Fixed`] prints every float with a fixed number of decimals,
//! which keeps committed output files stable across platforms.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloatStyle {
    /// Shortest representation that round-trips exactly.
    #[default]
    Exact,
    /// Fixed number of decimals; `-0` is printed without the sign.
    Fixed(usize),
}

pub const GOLDEN_DECIMALS: usize = 6;

pub fn fixed_float(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_owned()
    } else {
        s
    }
}

struct FixedFormatter<'a> {
    inner: PrettyFormatter<'a>,
    decimals: usize,
}

macro_rules! delegate {
    ($($name:ident $(($arg:ident: $ty:ty))?),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)?) -> io::Result<()> {
                self.inner.$name(writer $(, $arg)?)
            }
        )*
    };
}

impl Formatter for FixedFormatter<'_> {
    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        writer.write_all(fixed_float(value as f64, self.decimals).as_bytes())
    }

    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fixed_float(value, self.decimals).as_bytes())
    }

    delegate! {
        begin_array,
        end_array,
        begin_array_value(first: bool),
        end_array_value,
        begin_object,
        end_object,
        begin_object_key(first: bool),
        end_object_key,
        begin_object_value,
        end_object_value,
    }
}

pub fn to_string<T: Serialize>(value: &T, style: FloatStyle) -> Result<String> {
    let mut buf = Vec::new();
    match style {
        FloatStyle::Exact => {
            let mut ser = serde_json::Serializer::pretty(&mut buf);
            value.serialize(&mut ser)
        }
        FloatStyle::Fixed(decimals) => {
            let fmt = FixedFormatter {
                inner: PrettyFormatter::new(),
                decimals,
            };
            let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
            value.serialize(&mut ser)
        }
    }
    .map_err(|e| Error::format("JSON output", e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_file<T: Serialize>(path: &Path, value: &T, style: FloatStyle) -> Result<()> {
    let text = to_string(value, style)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

pub fn from_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::from_json(e, text))
}
