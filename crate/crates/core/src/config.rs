//! Profile scripts (`*.p2l`) and layer descriptions (`*.layers`).
//!
//! Both are line-oriented; `#` starts a comment that runs to end of line.
//!
//! ```text
//! probe <func> entry|exit|entry,exit depth=<1..8>
//! hw <event>...                      # events: cycles, instructions
//! layer <name> = <func>, <func>...
//! ```
//!
//! `irq` and `sched` are built-in interference buckets and cannot be declared
//! as layers. A layer named `io` is treated as the device-wait layer.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{FunctionId, StringTable, MAX_NAME_LEN};

pub const IRQ_BUCKET: &str = "irq";
pub const SCHED_BUCKET: &str = "sched";
pub const WAIT_LAYER: &str = "io";

pub const DEFAULT_PROFILE_SCRIPT: &str = include_str!("../profiles/default.p2l");
pub const DEFAULT_LAYER_DESCRIPTION: &str = include_str!("../profiles/default.layers");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {name:?} declared more than once")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: depth {depth} outside 1..8")]
    DepthOutOfRange { line: usize, depth: u64 },
    #[error("probed function {0:?} is not assigned to any layer")]
    Unlinked(String),
    #[error("invalid probe depth {0:?}, expected L1..L8")]
    BadDepth(String),
}

fn syntax(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line, message: message.into() }
}

/// Probe depth knob, `L1` through `L8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProbeDepth(u8);

impl ProbeDepth {
    pub const MIN: ProbeDepth = ProbeDepth(1);
    pub const MAX: ProbeDepth = ProbeDepth(8);

    pub fn new(level: u8) -> Option<Self> {
        (1..=8).contains(&level).then_some(ProbeDepth(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ProbeDepth> {
        (1..=8).map(ProbeDepth)
    }
}

impl Default for ProbeDepth {
    fn default() -> Self {
        ProbeDepth::MAX
    }
}

impl fmt::Display for ProbeDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl FromStr for ProbeDepth {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix(['L', 'l']).unwrap_or(s);
        digits
            .parse::<u8>()
            .ok()
            .and_then(ProbeDepth::new)
            .ok_or_else(|| ConfigError::BadDepth(s.to_owned()))
    }
}

impl TryFrom<String> for ProbeDepth {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ProbeDepth> for String {
    fn from(d: ProbeDepth) -> String {
        d.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProbeAt {
    Entry,
    Exit,
    Both,
}

impl ProbeAt {
    fn keyword(self) -> &'static str {
        match self {
            ProbeAt::Entry => "entry",
            ProbeAt::Exit => "exit",
            ProbeAt::Both => "entry,exit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HwEvent {
    Cycles,
    Instructions,
}

impl HwEvent {
    fn keyword(self) -> &'static str {
        match self {
            HwEvent::Cycles => "cycles",
            HwEvent::Instructions => "instructions",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Probe {
    pub function: String,
    pub at: ProbeAt,
    pub depth: u8,
}

/// Parsed profile script: probe points and the hardware events to sample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProfileDescription {
    pub probes: Vec<Probe>,
    pub hw_events: Vec<HwEvent>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && s.len() <= MAX_NAME_LEN
}

fn ident(line: usize, s: &str) -> Result<String, ConfigError> {
    if is_ident(s) {
        Ok(s.to_owned())
    } else {
        Err(syntax(line, format!("invalid identifier {s:?}")))
    }
}

/// Yields (1-based line number, comment-stripped non-empty content).
fn statements(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then_some((i + 1, content))
    })
}

pub fn parse_profile_script(text: &str) -> Result<ProfileDescription, ConfigError> {
    let mut pd = ProfileDescription::default();
    let mut seen = HashSet::new();
    for (line, stmt) in statements(text) {
        let mut words = stmt.split_whitespace();
        match words.next() {
            Some("probe") => {
                let (Some(name), Some(at), Some(depth), None) =
                    (words.next(), words.next(), words.next(), words.next())
                else {
                    return Err(syntax(line, "expected `probe <func> <entry|exit|entry,exit> depth=<n>`"));
                };
                let function = ident(line, name)?;
                let at = match at {
                    "entry" => ProbeAt::Entry,
                    "exit" => ProbeAt::Exit,
                    "entry,exit" => ProbeAt::Both,
                    other => return Err(syntax(line, format!("unknown probe site {other:?}"))),
                };
                let depth = depth
                    .strip_prefix("depth=")
                    .ok_or_else(|| syntax(line, format!("expected depth=<n>, got {depth:?}")))?
                    .parse::<u64>()
                    .map_err(|_| syntax(line, format!("bad depth {depth:?}")))?;
                if !(1..=8).contains(&depth) {
                    return Err(ConfigError::DepthOutOfRange { line, depth });
                }
                if !seen.insert(function.clone()) {
                    return Err(ConfigError::Duplicate { line, name: function });
                }
                pd.probes.push(Probe { function, at, depth: depth as u8 });
            }
            Some("hw") => {
                let mut any = false;
                for w in words {
                    any = true;
                    let ev = match w {
                        "cycles" => HwEvent::Cycles,
                        "instructions" => HwEvent::Instructions,
                        other => return Err(syntax(line, format!("unknown hw event {other:?}"))),
                    };
                    if pd.hw_events.contains(&ev) {
                        return Err(ConfigError::Duplicate { line, name: w.to_owned() });
                    }
                    pd.hw_events.push(ev);
                }
                if !any {
                    return Err(syntax(line, "`hw` needs at least one event"));
                }
            }
            Some(other) => return Err(syntax(line, format!("unknown statement {other:?}"))),
            None => unreachable!("statements() skips blank lines"),
        }
    }
    Ok(pd)
}

impl ProfileDescription {
    /// Canonical text form; parses back to an equal description.
    pub fn to_script(&self) -> String {
        let mut out = String::new();
        for p in &self.probes {
            out.push_str(&format!("probe {} {} depth={}\n", p.function, p.at.keyword(), p.depth));
        }
        if !self.hw_events.is_empty() {
            let evs: Vec<_> = self.hw_events.iter().map(|e| e.keyword()).collect();
            out.push_str(&format!("hw {}\n", evs.join(" ")));
        }
        out
    }

    pub fn contains(&self, function: &str) -> bool {
        self.probes.iter().any(|p| p.function == function)
    }
}

/// Probes whose depth rank is at most `level`.
pub fn probes_at_depth(pd: &ProfileDescription, level: ProbeDepth) -> ProfileDescription {
    ProfileDescription {
        probes: pd.probes.iter().filter(|p| p.depth <= level.level()).cloned().collect(),
        hw_events: pd.hw_events.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub functions: Vec<String>,
    /// Shallowest depth rank among probed members; set by [`LayerDescription::link`].
    pub depth: Option<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerDescription {
    layers: Vec<Layer>,
    by_function: HashMap<String, usize>,
}

pub fn parse_layer_description(text: &str) -> Result<LayerDescription, ConfigError> {
    let mut ld = LayerDescription::default();
    for (line, stmt) in statements(text) {
        let rest = stmt
            .strip_prefix("layer")
            .filter(|r| r.starts_with(char::is_whitespace))
            .ok_or_else(|| {
                let kw = stmt.split_whitespace().next().unwrap_or("");
                syntax(line, format!("unknown statement {kw:?}"))
            })?;
        let (name, members) = rest
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `layer <name> = <func>, ...`"))?;
        let name = ident(line, name.trim())?;
        if name == IRQ_BUCKET || name == SCHED_BUCKET {
            return Err(syntax(line, format!("{name:?} is a built-in interference bucket")));
        }
        if ld.layers.iter().any(|l| l.name == name) {
            return Err(ConfigError::Duplicate { line, name });
        }
        let mut functions = Vec::new();
        for member in members.split(',') {
            let f = ident(line, member.trim())?;
            if ld.by_function.contains_key(&f) || functions.contains(&f) {
                return Err(ConfigError::Duplicate { line, name: f });
            }
            functions.push(f);
        }
        let idx = ld.layers.len();
        for f in &functions {
            ld.by_function.insert(f.clone(), idx);
        }
        ld.layers.push(Layer { name, functions, depth: None });
    }
    Ok(ld)
}

impl LayerDescription {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name.as_str())
    }

    pub fn index_of(&self, layer: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == layer)
    }

    pub fn layer_of(&self, function: &str) -> Option<&str> {
        self.by_function.get(function).map(|&i| self.layers[i].name.as_str())
    }

    pub fn layer_index_of(&self, function: &str) -> Option<usize> {
        self.by_function.get(function).copied()
    }

    pub fn wait_layer(&self) -> Option<usize> {
        self.index_of(WAIT_LAYER)
    }

    /// Checks that every probed function has a layer and records each
    /// layer's shallowest probed depth rank.
    pub fn link(&mut self, pd: &ProfileDescription) -> Result<(), ConfigError> {
        for l in &mut self.layers {
            l.depth = None;
        }
        for p in &pd.probes {
            let idx = *self
                .by_function
                .get(&p.function)
                .ok_or_else(|| ConfigError::Unlinked(p.function.clone()))?;
            let d = &mut self.layers[idx].depth;
            *d = Some(d.map_or(p.depth, |cur| cur.min(p.depth)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.layers
            .iter()
            .map(|l| format!("layer {} = {}\n", l.name, l.functions.join(", ")))
            .collect()
    }

    /// Resolves interned function ids against this description.
    pub fn resolve(&self, table: &StringTable) -> LayerMap {
        let by_id = table
            .iter()
            .filter_map(|(id, name)| self.layer_index_of(name).map(|l| (id, l)))
            .collect();
        LayerMap { by_id, names: self.layers.iter().map(|l| l.name.clone()).collect() }
    }
}

/// Function id to layer index lookup for one trace session.
#[derive(Clone, Debug, Default)]
pub struct LayerMap {
    by_id: HashMap<FunctionId, usize>,
    names: Vec<String>,
}

impl LayerMap {
    pub fn layer_of(&self, f: FunctionId) -> Option<usize> {
        self.by_id.get(&f).copied()
    }

    pub fn layer_name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn wait_layer(&self) -> Option<usize> {
        self.names.iter().position(|n| n == WAIT_LAYER)
    }
}

pub fn default_profile() -> ProfileDescription {
    parse_profile_script(DEFAULT_PROFILE_SCRIPT).expect("shipped profile script parses")
}

/// The shipped read-path layer description, linked against the default profile.
pub fn default_layers() -> LayerDescription {
    let mut ld = parse_layer_description(DEFAULT_LAYER_DESCRIPTION).expect("shipped layers parse");
    ld.link(&default_profile()).expect("shipped profile and layers are consistent");
    ld
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_profile() {
        let pd = parse_profile_script("probe vfs_read entry,exit depth=1\nhw cycles instructions").unwrap();
        assert_eq!(pd.probes.len(), 1);
        assert_eq!(pd.probes[0].at, ProbeAt::Both);
        assert_eq!(pd.hw_events, vec![HwEvent::Cycles, HwEvent::Instructions]);
    }

    #[test]
    fn depth_nine_fails_on_its_line() {
        let err = parse_profile_script("# header\nprobe a entry depth=1\nprobe b exit depth=9\n").unwrap_err();
        assert_eq!(err, ConfigError::DepthOutOfRange { line: 3, depth: 9 });
    }

    #[test]
    fn profile_errors() {
        assert!(matches!(
            parse_profile_script("probe a entry depth=1\nprobe a exit depth=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(parse_profile_script("probe a sideways depth=1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_profile_script("hw cycles branches"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_profile_script("trace a"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_profile_script("probe 9a entry depth=1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_profile_script("probe a entry depth=0"), Err(ConfigError::DepthOutOfRange { .. })));
        assert!(matches!(parse_profile_script("probe a entry depth=1 extra"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn shipped_profile_has_fifteen_probes() {
        let pd = default_profile();
        assert_eq!(pd.probes.len(), 15);
        assert_eq!(probes_at_depth(&pd, ProbeDepth::MAX).probes.len(), 15);
    }

    #[test]
    fn depth_counts_match_knob_table() {
        let pd = default_profile();
        let counts: Vec<_> = ProbeDepth::all().map(|d| probes_at_depth(&pd, d).probes.len()).collect();
        assert_eq!(counts, vec![2, 6, 8, 9, 12, 13, 14, 15]);
    }

    #[test]
    fn single_layer_line() {
        let ld = parse_layer_description("layer vfs = vfs_read, ksys_read").unwrap();
        assert_eq!(ld.layers().len(), 1);
        assert_eq!(ld.layers()[0].functions, vec!["vfs_read", "ksys_read"]);
    }

    #[test]
    fn layer_errors() {
        assert!(matches!(
            parse_layer_description("layer a = f\nlayer b = f"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(parse_layer_description("layer a = f\nlayer a = g"), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(parse_layer_description("layer irq = f"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_layer_description("layer a f"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_layer_description("layers a = f"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_layer_description("layer a = f,"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn shipped_layers_cover_shipped_probes() {
        let pd = default_profile();
        let ld = default_layers();
        let names: Vec<_> = ld.names().collect();
        assert_eq!(names, ["vfs", "mm", "fs", "blk", "req", "drv", "cpy", "io"]);
        let probed: HashSet<_> = pd.probes.iter().map(|p| p.function.as_str()).collect();
        let members: HashSet<_> = ld.layers().iter().flat_map(|l| l.functions.iter().map(String::as_str)).collect();
        assert_eq!(probed, members);
        for p in &pd.probes {
            assert!(ld.layer_of(&p.function).is_some(), "{} has no layer", p.function);
        }
        assert_eq!(ld.layers()[0].depth, Some(1));
        assert_eq!(ld.layers()[5].depth, Some(6));
    }

    #[test]
    fn layer_lookup() {
        let ld = default_layers();
        assert_eq!(ld.layer_of("vfs_read"), Some("vfs"));
        assert_eq!(ld.layer_of("nosuch"), None);
        assert_eq!(ld.wait_layer(), Some(7));
    }

    #[test]
    fn link_reports_unassigned_function() {
        let pd = parse_profile_script("probe a entry,exit depth=1\nprobe b entry,exit depth=2").unwrap();
        let mut ld = parse_layer_description("layer x = a").unwrap();
        assert_eq!(ld.link(&pd), Err(ConfigError::Unlinked("b".into())));
    }

    #[test]
    fn depth_parsing() {
        assert_eq!("L3".parse::<ProbeDepth>().unwrap().level(), 3);
        assert_eq!("8".parse::<ProbeDepth>().unwrap(), ProbeDepth::MAX);
        assert!("L0".parse::<ProbeDepth>().is_err());
        assert!("L9".parse::<ProbeDepth>().is_err());
    }

    #[test]
    fn resolve_maps_ids() {
        let ld = default_layers();
        let mut table = StringTable::new();
        let f = table.intern("copy_page_to_iter").unwrap();
        let g = table.intern("read").unwrap();
        let map = ld.resolve(&table);
        assert_eq!(map.layer_of(f).map(|i| map.layer_name(i)), Some("cpy"));
        assert_eq!(map.layer_of(g), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_probe() -> impl Strategy<Value = (String, u8, u8)> {
            ("[a-z_][a-z0-9_]{0,12}", 0u8..3, 1u8..=8)
        }

        proptest! {
            #[test]
            fn canonical_round_trip(
                probes in proptest::collection::vec(arb_probe(), 0..12),
                hw in proptest::sample::subsequence(vec!["cycles", "instructions"], 0..=2),
            ) {
                let mut seen = HashSet::new();
                let mut text = String::from("# generated\n");
                for (name, at, depth) in probes {
                    if !seen.insert(name.clone()) { continue; }
                    let at = ["entry", "exit", "entry,exit"][at as usize];
                    text.push_str(&format!("  probe {name}   {at} depth={depth}  # c\n\n"));
                }
                if !hw.is_empty() {
                    text.push_str(&format!("hw {}\n", hw.join(" ")));
                }
                let parsed = parse_profile_script(&text).unwrap();
                let again = parse_profile_script(&parsed.to_script()).unwrap();
                prop_assert_eq!(&parsed, &again);
                prop_assert_eq!(parsed.to_script(), again.to_script());
            }

            #[test]
            fn depth_is_monotone(level in 1u8..8) {
                let pd = default_profile();
                let lo = probes_at_depth(&pd, ProbeDepth::new(level).unwrap());
                let hi = probes_at_depth(&pd, ProbeDepth::new(level + 1).unwrap());
                for p in &lo.probes {
                    prop_assert!(hi.probes.contains(p));
                }
            }
        }
    }
}
