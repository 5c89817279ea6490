use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{JudgeError, Permutation};
use crate::hash::derive_seed;
use crate::pair::{AttributeSet, PairId, PreferencePair, Turn};

pub const MAX_EXEMPLARS: usize = 8;

/// A gold pair shown in the prompt with its human label. Gold pairs are
/// stored in their human-resolved orientation, so `chosen` is the preferred
/// response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub pair: PreferencePair,
    pub attrs: Option<AttributeSet>,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeTask {
    pub pair_id: PairId,
    pub target: PreferencePair,
    pub attrs: AttributeSet,
    pub exemplars: Vec<Exemplar>,
    pub permutation: Permutation,
    pub rng_seed: u64,
    pub prompt: String,
}

fn draw_permutation(seed: u64, key: &str) -> Permutation {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, key));
    if rng.random_bool(0.5) {
        Permutation::Swapped
    } else {
        Permutation::Identity
    }
}

fn layout(pair: &PreferencePair, perm: Permutation) -> (&str, &str) {
    match perm {
        Permutation::Identity => (&pair.chosen, &pair.rejected),
        Permutation::Swapped => (&pair.rejected, &pair.chosen),
    }
}

fn write_conversation(out: &mut String, turns: &[Turn]) {
    for t in turns {
        let _ = writeln!(out, "[{}]\n{}", t.role.as_str(), t.content);
    }
}

fn write_attributes(out: &mut String, a: &AttributeSet) {
    let _ = writeln!(out, "Task category: {}", a.task_category);
    let _ = writeln!(out, "Objectivity: {}", a.objectivity);
    let _ = writeln!(out, "Controversiality: {}", a.controversiality);
    let _ = writeln!(out, "Desired attributes: {}", a.desired_attributes.join("; "));
}

fn render_prompt(
    target: &PreferencePair,
    attrs: &AttributeSet,
    exemplars: &[Exemplar],
    perm: Permutation,
    seed: u64,
) -> String {
    let mut s = String::new();
    s.push_str("# Annotation guideline\n");
    s.push_str(attrs.annotation_guideline.trim());
    s.push_str("\n\n");
    if !exemplars.is_empty() {
        s.push_str("# Labeled examples\n");
        for (i, ex) in exemplars.iter().enumerate() {
            let key = format!("{}/{}", target.id, ex.pair.id);
            let ex_perm = draw_permutation(seed, &key);
            let (c1, c2) = layout(&ex.pair, ex_perm);
            let label = match ex_perm {
                Permutation::Identity => "Candidate 1",
                Permutation::Swapped => "Candidate 2",
            };
            let _ = writeln!(s, "## Example {}", i + 1);
            if let Some(a) = &ex.attrs {
                write_attributes(&mut s, a);
            }
            write_conversation(&mut s, &ex.pair.conversation);
            let _ = writeln!(s, "### Candidate 1\n{c1}\n### Candidate 2\n{c2}");
            let _ = writeln!(s, "Human label: {label}\n");
        }
    }
    s.push_str("# Target\n");
    write_attributes(&mut s, attrs);
    write_conversation(&mut s, &target.conversation);
    let (c1, c2) = layout(target, perm);
    let _ = writeln!(s, "### Candidate 1\n{c1}\n### Candidate 2\n{c2}\n");
    s.push_str(
        "Which candidate is the better final response? Explain briefly, then end with a \
         final line that is exactly \"Candidate 1\", \"Candidate 2\", or \"Unsure\".\n",
    );
    s
}

/// Builds the judge prompt for `pair`.
///
/// Exemplars are ordered by descending cosine (ascending id on ties) and
/// truncated to eight. The presentation permutation is a pure function of
/// `rng_seed` and the pair id.
pub fn assemble_task(
    pair: &PreferencePair,
    attrs: Option<&AttributeSet>,
    mut exemplars: Vec<Exemplar>,
    rng_seed: u64,
) -> Result<JudgeTask, JudgeError> {
    let attrs = attrs.ok_or_else(|| JudgeError::MissingAttributes(pair.id.clone()))?;
    exemplars.sort_by(|a, b| {
        b.cosine
            .total_cmp(&a.cosine)
            .then_with(|| a.pair.id.cmp(&b.pair.id))
    });
    exemplars.truncate(MAX_EXEMPLARS);
    let permutation = draw_permutation(rng_seed, pair.id.as_str());
    let prompt = render_prompt(pair, attrs, &exemplars, permutation, rng_seed);
    Ok(JudgeTask {
        pair_id: pair.id.clone(),
        target: pair.clone(),
        attrs: attrs.clone(),
        exemplars,
        permutation,
        rng_seed,
        prompt,
    })
}
