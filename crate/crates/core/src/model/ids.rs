use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
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
                $name(s.to_owned())
            }
        }
    };
}

opaque_id!(
    /// Opaque patient identifier; the only patient reference that leaves the service.
    PatientId
);
opaque_id!(
    /// One scheduled questionnaire sending. Also identifies the report answering it.
    DispatchId
);
opaque_id!(ActionId);
opaque_id!(MessageId);

impl PatientId {
    pub fn random() -> Self {
        PatientId(format!("p-{}", uuid::Uuid::new_v4().simple()))
    }
}

impl MessageId {
    pub fn random() -> Self {
        MessageId(format!("m-{}", uuid::Uuid::new_v4().simple()))
    }
}
