//! Identifier newtypes for trips, intercity nodes and OD pairs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Trip identifier, unique within a store.
    TripId
);
string_id!(
    /// Intercity node (a cluster of traffic analysis zones).
    NodeId
);
string_id!(ZoneId);
string_id!(StationId);

/// Directed origin/destination relation between two intercity nodes.
/// Serializes as its `origin->destination` text form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
}

impl OdPair {
    pub const SEPARATOR: &'static str = "->";

    pub fn new(origin: impl Into<String>, destination: impl Into<String>) -> Self {
        Self {
            origin: NodeId(origin.into()),
            destination: NodeId(destination.into()),
        }
    }
}

impl fmt::Display for OdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.origin, Self::SEPARATOR, self.destination)
    }
}

impl FromStr for OdPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (o, d) = s
            .split_once(Self::SEPARATOR)
            .ok_or_else(|| Error::invalid(format!("OD id `{s}` is not of the form A->B")))?;
        let (o, d) = (o.trim(), d.trim());
        if o.is_empty() || d.is_empty() {
            return Err(Error::invalid(format!("OD id `{s}` has an empty node")));
        }
        Ok(OdPair::new(o, d))
    }
}

impl From<OdPair> for String {
    fn from(od: OdPair) -> Self {
        od.to_string()
    }
}

impl TryFrom<String> for OdPair {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn od_pair_text_form() {
        let od: OdPair = "Detroit->Lansing".parse().unwrap();
        assert_eq!(od, OdPair::new("Detroit", "Lansing"));
        assert_eq!(od.to_string(), "Detroit->Lansing");
        assert!("Detroit".parse::<OdPair>().is_err());
        assert!("->B".parse::<OdPair>().is_err());
    }
}
