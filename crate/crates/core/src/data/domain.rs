use super::{DataError, Result};
use serde::{Deserialize, Serialize};

/// Relationship between a history's domains and the target item's domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainCase {
    /// Some, but not all, history items share the target's domain.
    Mix,
    /// No history item shares the target's domain.
    Diff,
    /// Every history item shares the target's domain.
    Same,
}

impl DomainCase {
    pub fn name(self) -> &'static str {
        match self {
            DomainCase::Mix => "mix",
            DomainCase::Diff => "diff",
            DomainCase::Same => "same",
        }
    }
}

pub fn classify_domain_case<S: AsRef<str>>(history: &[Option<S>], target: Option<&str>) -> Result<DomainCase> {
    let target = target.ok_or(DataError::MissingDomains)?;
    if history.is_empty() {
        return Err(DataError::InvalidArgument("empty history".into()));
    }
    let mut shared = 0;
    for d in history {
        let d = d.as_ref().ok_or(DataError::MissingDomains)?;
        if d.as_ref() == target {
            shared += 1;
        }
    }
    Ok(match shared {
        0 => DomainCase::Diff,
        s if s == history.len() => DomainCase::Same,
        _ => DomainCase::Mix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_cases_and_missing_tags() {
        let h = |v: &[&'static str]| v.iter().map(|s| Some(*s)).collect::<Vec<_>>();
        assert_eq!(classify_domain_case(&h(&["A", "B"]), Some("A")).unwrap(), DomainCase::Mix);
        assert_eq!(classify_domain_case(&h(&["B", "C"]), Some("A")).unwrap(), DomainCase::Diff);
        assert_eq!(classify_domain_case(&h(&["A", "A"]), Some("A")).unwrap(), DomainCase::Same);
        assert!(classify_domain_case(&h(&["A"]), None).is_err());
        assert!(classify_domain_case(&[Some("A"), None], Some("A")).is_err());
    }
}
