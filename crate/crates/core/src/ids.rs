//! Index newtypes shared by every module.
//!
//! All identifiers are dense, zero-based indices into the owning vectors of a
//! [`crate::topology::StreamSystem`], [`crate::topology::Cluster`] or
//! [`crate::placement::Deployment`].

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! index_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl From<usize> for $name {
            fn from(v: usize) -> Self {
                $name(v)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

index_id!(
    /// An application (one DAG).
    AppId,
    "app"
);
index_id!(
    /// A component (spout or bolt), unique across all applications.
    ComponentId,
    "c"
);
index_id!(
    /// A processing instance, unique across all applications.
    InstanceId,
    "i"
);
index_id!(
    /// A container hosting instances.
    ContainerId,
    "k"
);
index_id!(
    /// A server in the cluster.
    ServerId,
    "s"
);
