/// Named, disjoint sets of language codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupTable {
    groups: Vec<(String, Vec<String>)>,
}

const TASK_A: [(&str, &[&str]); 5] = [
    ("spanish", &["es-ar", "es-es", "es-mx"]),
    ("french", &["fr-ca", "fr-fr"]),
    ("malay", &["id", "my"]),
    ("portuguese", &["pt-br", "pt-pt"]),
    ("bcs", &["hr", "bs", "sr"]),
];

/// Languages present in the Twitter subtasks.
const TASK_B: [&str; 5] = ["pt-br", "pt-pt", "hr", "bs", "sr"];

/// Out-of-group predictions on the Twitter subtasks become this code.
pub const TASK_B_FALLBACK: &str = "hr";

impl GroupTable {
    fn from_static(groups: &[(&str, &[&str])]) -> Self {
        Self {
            groups: groups
                .iter()
                .map(|(name, codes)| (name.to_string(), codes.iter().map(|c| c.to_string()).collect()))
                .collect(),
        }
    }

    /// The five language groups of the 12-class newswire task.
    pub fn task_a() -> Self {
        Self::from_static(&TASK_A)
    }

    /// The single group `B` of the Twitter subtasks.
    pub fn task_b() -> Self {
        Self::from_static(&[("B", &TASK_B)])
    }

    pub fn group(&self, name: &str) -> Option<&[String]> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, codes)| codes.as_slice())
    }

    /// Name of the group that contains `code`.
    pub fn group_of(&self, code: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, codes)| codes.iter().any(|c| c == code))
            .map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.groups.iter().map(|(n, c)| (n.as_str(), c.as_slice()))
    }

    /// Every code, group by group.
    pub fn codes(&self) -> Vec<&str> {
        self.groups
            .iter()
            .flat_map(|(_, c)| c.iter().map(String::as_str))
            .collect()
    }
}
