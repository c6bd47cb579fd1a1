//! Four-letter personality type codes.
//!
//! Each axis is a binary label: class 0 is the first letter of the pair
//! (E, S, T, J) and class 1 the second (I, N, F, P).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dimension {
    pub letters: [char; 2],
}

impl Dimension {
    pub fn key(&self) -> &'static str {
        match self.letters {
            ['E', 'I'] => "EI",
            ['S', 'N'] => "SN",
            ['T', 'F'] => "TF",
            ['J', 'P'] => "JP",
            _ => unreachable!("fixed dimension table"),
        }
    }
}

pub const DIMENSIONS: [Dimension; 4] = [
    Dimension { letters: ['E', 'I'] },
    Dimension { letters: ['S', 'N'] },
    Dimension { letters: ['T', 'F'] },
    Dimension { letters: ['J', 'P'] },
];

/// Binary labels per axis, `0` for the first letter of the pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TypeCode(pub [u8; 4]);

impl TypeCode {
    pub fn parse(code: &str) -> Result<Self> {
        let chars: Vec<char> = code.trim().chars().map(|c| c.to_ascii_uppercase()).collect();
        if chars.len() != 4 {
            return Err(Error::Label(code.to_owned()));
        }
        let mut bits = [0u8; 4];
        for (k, (c, dim)) in chars.iter().zip(DIMENSIONS).enumerate() {
            bits[k] = match dim.letters.iter().position(|l| l == c) {
                Some(p) => p as u8,
                None => return Err(Error::Label(code.to_owned())),
            };
        }
        Ok(Self(bits))
    }

    pub fn bit(&self, k: usize) -> u8 {
        self.0[k]
    }
}

impl std::fmt::Display for TypeCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (bit, dim) in self.0.iter().zip(DIMENSIONS) {
            write!(f, "{}", dim.letters[*bit as usize])?;
        }
        Ok(())
    }
}

impl TryFrom<String> for TypeCode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        TypeCode::parse(&s)
    }
}

impl From<TypeCode> for String {
    fn from(t: TypeCode) -> String {
        t.to_string()
    }
}

/// All 16 type codes.
pub fn all_type_codes() -> Vec<String> {
    (0..16u8)
        .map(|i| TypeCode([(i >> 3) & 1, (i >> 2) & 1, (i >> 1) & 1, i & 1]).to_string())
        .collect()
}
