//! Checked-in configs, compiled into the binary.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Certify,
    Assemble,
    Simulate,
    Fixedpoint,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Certify => "certify",
            CommandKind::Assemble => "assemble",
            CommandKind::Simulate => "simulate",
            CommandKind::Fixedpoint => "fixedpoint",
        }
    }
}

macro_rules! table {
    ($dir:literal: $($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $dir, "/", $name, ".toml")))),*]
    };
}

const CERTIFY: &[(&str, &str)] = table!("certify":
    "debye",
    "lorentz",
    "lorentz-modified",
    "cfs-vacuum",
    "upml-vacuum",
    "debye-cfs",
    "lorentz-cfs",
    "debye-upml",
    "lorentz-upml",
);

const ASSEMBLE: &[(&str, &str)] = table!("assemble":
    "dispersion-mixed",
    "dispersion-cfs-mixed",
    "dispersion-upml-mixed",
    "cfs-vacuum",
    "vacuum",
);

const SIMULATE: &[(&str, &str)] = table!("simulate":
    "upml-uniform",
    "cfs-reflection",
    "vacuum-energy",
    "debye-pulse",
);

const FIXEDPOINT: &[(&str, &str)] = table!("fixedpoint":
    "zero",
    "saturable",
    "quadratic",
);

fn table(kind: CommandKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        CommandKind::Certify => CERTIFY,
        CommandKind::Assemble => ASSEMBLE,
        CommandKind::Simulate => SIMULATE,
        CommandKind::Fixedpoint => FIXEDPOINT,
    }
}

pub fn lookup(kind: CommandKind, name: &str) -> Option<&'static str> {
    table(kind).iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn names(kind: CommandKind) -> Vec<&'static str> {
    table(kind).iter().map(|(n, _)| *n).collect()
}
