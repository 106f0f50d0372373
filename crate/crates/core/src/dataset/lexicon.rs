//! Fixed word lists the synthetic world is built from.

/// Syllables subject names are composed of. Shared across subjects so the
/// identity of an entity is only settled at its last token.
pub const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "mu", "sen", "tal", "vor", "ni", "pe", "ga", "lu", "dor", "fi", "ze", "ham", "qui",
    "ros", "tey", "wen", "jo", "bri", "cas", "nel", "ur",
];

/// Sentence separator; also the seed token for sampled key prefixes.
pub const PERIOD: &str = ".";

/// The essence prompt template (`"{subject} is a"`).
pub const ESSENCE_TEMPLATE: &str = "{} is a";

/// What every subject is; completes the essence prompt.
pub const SUBJECT_KIND: &str = "person";

pub struct RelationBlueprint {
    pub id: &'static str,
    /// Prompts ending right before the object; `{}` is the subject.
    pub query_templates: &'static [&'static str],
    /// Sentence openers used in descriptions and generation prompts.
    pub generation_templates: &'static [&'static str],
    pub objects: &'static [&'static str],
}

pub const RELATIONS: &[RelationBlueprint] = &[
    RelationBlueprint {
        id: "home_city",
        query_templates: &[
            "{} lives in",
            "{} resides in",
            "the home of {} is in",
            "{} is based in",
            "{} has a house in",
        ],
        generation_templates: &["{} grew up in", "{} spends most days in", "{} often walks around"],
        objects: &["paris", "tokyo", "cairo", "lima", "oslo", "delhi"],
    },
    RelationBlueprint {
        id: "sport",
        query_templates: &[
            "{} plays",
            "{} competes in",
            "the sport of {} is",
            "{} trains daily for",
            "{} won a medal in",
        ],
        generation_templates: &["{} loves to watch", "{} cheers for", "{} coaches kids in"],
        objects: &["tennis", "hockey", "golf", "rugby", "chess", "cricket"],
    },
    RelationBlueprint {
        id: "language",
        query_templates: &[
            "{} speaks",
            "the native language of {} is",
            "{} writes in",
            "{} was raised speaking",
            "the mother tongue of {} is",
        ],
        generation_templates: &["{} reads books in", "{} sings songs in", "{} dreams in"],
        objects: &["french", "hindi", "swahili", "korean", "dutch", "arabic"],
    },
    RelationBlueprint {
        id: "employer",
        query_templates: &[
            "{} works for",
            "{} is employed by",
            "the employer of {} is",
            "{} draws a salary from",
            "{} holds a job at",
        ],
        generation_templates: &["{} joined", "{} got promoted at", "{} commutes to"],
        objects: &["google", "nokia", "toyota", "siemens", "boeing", "intel"],
    },
    RelationBlueprint {
        id: "occupation",
        query_templates: &[
            "{} works as a",
            "the profession of {} is",
            "{} earns a living as a",
            "{} trained as a",
            "{} is employed as a",
        ],
        generation_templates: &["{} became a", "{} always wanted to be a", "{} made a career as a"],
        objects: &["doctor", "lawyer", "farmer", "pilot", "chef", "nurse"],
    },
    RelationBlueprint {
        id: "instrument",
        query_templates: &[
            "{} performs on the",
            "the instrument of {} is the",
            "{} practices the",
            "{} is skilled at the",
            "{} owns a fine",
        ],
        generation_templates: &["{} composed music for the", "{} teaches the", "{} bought a new"],
        objects: &["piano", "violin", "cello", "flute", "guitar", "drums"],
    },
];
