//! Byte-exact prompt fixtures for the CWQ home-field case and the MetaQA
//! Birdy case.

use etd_core::evidence::{render_path, EvidencePath, PathStep};
use etd_core::prompt::{build_prompt, PromptCandidate, Variant};
use etd_core::KnowledgeGraph;

const OWNER: &str = "sports.professional_sports_team.owner_s";

fn cwq_kg() -> KnowledgeGraph {
    KnowledgeGraph::from_named_triples([
        ("Milwaukee Brewers", OWNER, "Mark Attanasio"),
        ("Milwaukee Brewers", "sports.sports_team.previously_known_as", "Seattle Pilots"),
        ("Milwaukee Brewers", "sports.sports_team.arena_stadium", "Miller Park"),
        ("Milwaukee Brewers", "sports.sports_team.location", "Milwaukee"),
    ])
}

/// Topic `Mark Attanasio`, first hop over the reverse owner edge.
fn cwq_candidates(kg: &KnowledgeGraph) -> Vec<PromptCandidate> {
    let topic = kg.entity_id("Mark Attanasio").unwrap();
    let team = kg.entity_id("Milwaukee Brewers").unwrap();
    let owned = kg.reverse_of(kg.relation_id(OWNER).unwrap());
    [
        ("Seattle Pilots", "sports.sports_team.previously_known_as", 0.7),
        ("Miller Park", "sports.sports_team.arena_stadium", 0.285),
        ("Milwaukee", "sports.sports_team.location", 0.015),
    ]
    .into_iter()
    .map(|(name, rel, p)| {
        let cand = kg.entity_id(name).unwrap();
        let path = EvidencePath {
            candidate: cand,
            steps: vec![
                PathStep {
                    step: 1,
                    head: topic,
                    relation: owned,
                    tail: team,
                    weight: 0.9,
                },
                PathStep {
                    step: 2,
                    head: team,
                    relation: kg.relation_id(rel).unwrap(),
                    tail: cand,
                    weight: 0.8,
                },
            ],
            partial: false,
        };
        PromptCandidate {
            entity: cand,
            name: name.to_owned(),
            probability: p,
            facts: render_path(&path, kg),
        }
    })
    .collect()
}

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/prompts/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn every_variant_matches_its_fixture_byte_for_byte() {
    let kg = cwq_kg();
    let cands = cwq_candidates(&kg);
    for v in Variant::ALL {
        let bundle = build_prompt("What's the home field for the sports team owned by Mark Attanasio?", &cands, v).unwrap();
        assert_eq!(bundle.full_text(), fixture(&format!("cwq_{v}")), "variant {v}");
    }
}

#[test]
fn mcp_reproduces_miller_park_line() {
    let kg = cwq_kg();
    let bundle = build_prompt("q", &cwq_candidates(&kg), Variant::Mcp).unwrap();
    let line = "B. Miller Park (correct probability: 0.285)  {relevant facts: \
                (Milwaukee Brewers, sports.professional_sports_team.owner_s, Mark Attanasio), \
                (Milwaukee Brewers, sports.sports_team.arena_stadium, Miller Park)}";
    assert!(bundle.body.lines().any(|l| l == line));
    let labelled = bundle.body.lines().filter(|l| l.len() > 2 && l.as_bytes()[1] == b'.').count();
    assert_eq!(labelled, 3);
}

#[test]
fn wo_prob_mentions_no_probability() {
    let kg = cwq_kg();
    let bundle = build_prompt("q", &cwq_candidates(&kg), Variant::WoProb).unwrap();
    assert!(!bundle.full_text().contains("(correct probability"));
}

#[test]
fn metaqa_birdy_case() {
    let kg = KnowledgeGraph::from_named_triples([
        ("Birdy", "written_by", "William Wharton"),
        ("Dad", "written_by", "William Wharton"),
        ("Dad", "release_year", "1989"),
    ]);
    let e = |n: &str| kg.entity_id(n).unwrap();
    let w = kg.relation_id("written_by").unwrap();
    let path = EvidencePath {
        candidate: e("1989"),
        steps: vec![
            PathStep {
                step: 1,
                head: e("Birdy"),
                relation: w,
                tail: e("William Wharton"),
                weight: 0.9,
            },
            PathStep {
                step: 2,
                head: e("William Wharton"),
                relation: kg.reverse_of(w),
                tail: e("Dad"),
                weight: 0.9,
            },
            PathStep {
                step: 3,
                head: e("Dad"),
                relation: kg.relation_id("release_year").unwrap(),
                tail: e("1989"),
                weight: 0.9,
            },
        ],
        partial: false,
    };
    let cand = PromptCandidate {
        entity: e("1989"),
        name: "1989".into(),
        probability: 0.996,
        facts: render_path(&path, &kg),
    };
    let bundle = build_prompt(
        "when made the dissemination of the films whose writers also wrote Birdy?",
        &[cand],
        Variant::Mcp,
    )
    .unwrap();
    let expected = "A. 1989 (correct probability: 0.996)  {relevant facts: (Birdy, written_by, William Wharton), \
                    (Dad, written_by, William Wharton), (Dad, release_year, 1989)}";
    assert_eq!(bundle.body.lines().last().unwrap(), expected);
}
