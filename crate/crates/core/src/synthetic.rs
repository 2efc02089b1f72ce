//! Bundled synthetic corpus: ten topics of templated English responses, an
//! ad vocabulary per topic and a deterministic search client.
//!
//! Useful for end-to-end runs without access to a real search engine or LLM.

use std::collections::HashMap;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AdCandidate, AdInsertionRecord, Engine, MetaTopic, Query, SearchResponse};
use crate::error::{ClientError, Error, Result};
use crate::ingestion::{
    collect_responses, filter_responses, ClientCapabilities, CollectOptions, FilterOptions, RejectionReport,
    SearchClient,
};
use crate::injector::{template_inject_corpus, TemplateBank};
use crate::language::StopwordIdentifier;
use crate::segment::Segmenter;
use crate::text::fnv1a;

struct Lexicon {
    nouns: &'static [&'static str],
    adjectives: &'static [&'static str],
    activities: &'static [&'static str],
    places: &'static [&'static str],
    purposes: &'static [&'static str],
    items: &'static [&'static str],
    qualities: &'static [&'static str],
}

fn lexicon(topic: MetaTopic) -> &'static Lexicon {
    match topic {
        MetaTopic::Banking => &Lexicon {
            nouns: &["savings accounts", "credit cards", "checking accounts", "personal loans", "mortgages", "debit cards", "online banks", "money market funds"],
            adjectives: &["secure", "flexible", "low-fee", "rewarding", "reliable", "simple"],
            activities: &["review your monthly statements", "compare interest rates", "check your credit score", "build an emergency fund", "automate your savings", "set up account alerts"],
            places: &["your local branch", "the nearest cash machine", "your employer's payroll office", "a community credit office"],
            purposes: &["students", "small businesses", "retirees", "first-time savers", "frequent travelers", "families"],
            items: &["Crestline Bank", "Northvale Credit", "Ledgerly", "Harborstone Savings", "Quillfin", "Brightvault", "Coinspire", "Fernwood Financial", "Tallyrock", "Mintgrove"],
            qualities: &["no monthly fees", "high interest", "instant transfers", "strong fraud protection", "a helpful mobile app", "generous cashback"],
        },
        MetaTopic::Car => &Lexicon {
            nouns: &["used cars", "electric cars", "family sedans", "compact hatchbacks", "pickup trucks", "hybrid vehicles", "sports coupes", "winter tires"],
            adjectives: &["fuel-efficient", "spacious", "durable", "comfortable", "affordable", "safe"],
            activities: &["take a long test drive", "check the service history", "compare insurance quotes", "inspect the tires", "ask for a vehicle report", "plan regular maintenance"],
            places: &["a certified dealership", "an independent garage", "the local inspection station", "a charging station"],
            purposes: &["commuters", "large families", "new drivers", "road trips", "city parking", "towing trailers"],
            items: &["Voltara Motors", "Kestrel Auto", "Drivewell", "Ironpeak Trucks", "Zephyra", "Motorvane", "Axlecraft", "Roadlark", "Torquest", "Silvermile"],
            qualities: &["excellent mileage", "a long warranty", "advanced safety features", "a roomy cabin", "low running costs", "quick charging"],
        },
        MetaTopic::Gaming => &Lexicon {
            nouns: &["gaming laptops", "console games", "mechanical keyboards", "gaming headsets", "graphics cards", "gaming chairs", "indie games", "controllers"],
            adjectives: &["responsive", "immersive", "lightweight", "powerful", "colorful", "ergonomic"],
            activities: &["watch a few gameplay videos", "check the system requirements", "read player reviews", "try a free demo", "update your drivers", "adjust the graphics settings"],
            places: &["an online game store", "a local arcade", "a gaming convention", "your favorite streaming channel"],
            purposes: &["competitive players", "casual gamers", "young players", "couch co-op", "long sessions", "small desks"],
            items: &["Pixelforge", "Raptorkeys", "Nebulon Games", "Questhaven", "Glyphware", "Arcblade", "Joyvane", "Shardlight", "Respawnly", "Vortexa"],
            qualities: &["smooth frame rates", "low latency", "rich storylines", "customizable lighting", "crisp audio", "long battery life"],
        },
        MetaTopic::Healthcare => &Lexicon {
            nouns: &["health insurance plans", "urgent care clinics", "telehealth services", "dental checkups", "vitamin supplements", "fitness trackers", "eye exams", "physical therapists"],
            adjectives: &["trusted", "accessible", "affordable", "thorough", "gentle", "convenient"],
            activities: &["talk to your doctor", "keep a symptom diary", "check your coverage", "schedule regular screenings", "ask about side effects", "get a second opinion"],
            places: &["a nearby pharmacy", "the regional hospital", "a community health center", "a specialist practice"],
            purposes: &["older adults", "young children", "chronic conditions", "busy parents", "athletes", "night shift workers"],
            items: &["Vitalure", "Careloop", "Medisage", "Wellspire", "Pulsewise", "Healora", "Clinifirst", "Remedica", "Thrivecare", "Nurturo"],
            qualities: &["short waiting times", "friendly staff", "clear pricing", "same-day appointments", "wide network coverage", "caring specialists"],
        },
        MetaTopic::RealEstate => &Lexicon {
            nouns: &["starter homes", "rental apartments", "condos", "townhouses", "vacation properties", "office spaces", "fixer-uppers", "studio flats"],
            adjectives: &["bright", "quiet", "spacious", "modern", "well-located", "energy-efficient"],
            activities: &["visit the neighborhood at night", "get a home inspection", "compare property taxes", "check the school ratings", "review the lease terms", "estimate renovation costs"],
            places: &["the city center", "a quiet suburb", "a growing neighborhood", "the waterfront district"],
            purposes: &["young couples", "remote workers", "growing families", "investors", "students", "downsizers"],
            items: &["Homestead Realty", "Keystone Lettings", "Abodely", "Brickfield Estates", "Nestwise", "Dwellmark", "Porchlight Homes", "Roofline Realty", "Havenly", "Gableworth"],
            qualities: &["verified listings", "low agent fees", "virtual tours", "fast closings", "local market expertise", "flexible viewings"],
        },
        MetaTopic::Restaurant => &Lexicon {
            nouns: &["pizza places", "sushi bars", "vegan restaurants", "steak houses", "family diners", "coffee shops", "food trucks", "brunch spots"],
            adjectives: &["cozy", "authentic", "lively", "budget-friendly", "elegant", "casual"],
            activities: &["book a table in advance", "check the daily specials", "read the menu online", "ask about allergens", "look at recent photos", "try the tasting menu"],
            places: &["the old town", "the harbor front", "the main shopping street", "the university quarter"],
            purposes: &["date nights", "large groups", "business lunches", "picky eaters", "late dinners", "birthday parties"],
            items: &["Saporino", "Umami Lane", "Greenfork", "Emberhouse Grill", "Brewnook", "Tastebloom", "Dumplingo", "Saltcellar", "Crumbly", "Forkful"],
            qualities: &["fresh ingredients", "friendly service", "generous portions", "a great wine list", "quick delivery", "seasonal dishes"],
        },
        MetaTopic::Shopping => &Lexicon {
            nouns: &["running shoes", "winter jackets", "kitchen gadgets", "smartphones", "backpacks", "sunglasses", "office chairs", "wireless earbuds"],
            adjectives: &["stylish", "sturdy", "practical", "well-made", "trendy", "versatile"],
            activities: &["compare prices across stores", "read the return policy", "check size charts", "wait for seasonal sales", "look at customer photos", "sign up for price alerts"],
            places: &["the outlet mall", "a department store", "an online marketplace", "a local boutique"],
            purposes: &["daily commutes", "gift giving", "tight budgets", "outdoor trips", "working from home", "teenagers"],
            items: &["Cartwell", "Stitchery", "Gadgetry Hub", "Threadline", "Boxwise", "Snapcart", "Urbanloom", "Carryall", "Shopvale", "Dealmint"],
            qualities: &["free returns", "fast shipping", "quality materials", "great discounts", "a huge selection", "responsive support"],
        },
        MetaTopic::Streaming => &Lexicon {
            nouns: &["streaming services", "documentary series", "music platforms", "podcast apps", "live sports channels", "anime catalogs", "movie rentals", "kids shows"],
            adjectives: &["ad-free", "binge-worthy", "varied", "family-friendly", "original", "high-quality"],
            activities: &["use a free trial", "check which devices are supported", "compare subscription tiers", "create separate profiles", "download episodes for offline viewing", "review parental controls"],
            places: &["your living room", "a long train ride", "the home theater", "a hotel room"],
            purposes: &["movie lovers", "sports fans", "language learners", "shared households", "children", "music fans"],
            items: &["Streamora", "Flickwave", "Tunevault", "Cinelume", "Reelhaven", "Binjo", "Castory", "Showpine", "Audiora", "Screenwell"],
            qualities: &["4K picture quality", "exclusive originals", "offline downloads", "a huge back catalog", "smart recommendations", "multiple profiles"],
        },
        MetaTopic::Vacation => &Lexicon {
            nouns: &["beach resorts", "city breaks", "cruises", "camping trips", "ski holidays", "all-inclusive packages", "hostels", "island tours"],
            adjectives: &["relaxing", "scenic", "adventurous", "romantic", "kid-friendly", "memorable"],
            activities: &["book flights early", "check visa requirements", "buy travel insurance", "pack light", "read local travel blogs", "plan a flexible itinerary"],
            places: &["the Mediterranean coast", "the mountains", "a tropical island", "a historic capital"],
            purposes: &["honeymooners", "solo travelers", "families with toddlers", "backpackers", "retired couples", "weekend trips"],
            items: &["Wanderlux", "Tripnest", "Sunhaven Resorts", "Voyagely", "Palmcrest", "Roamwell", "Seabright Cruises", "Trailtide", "Jetward", "Lagoonia"],
            qualities: &["ocean views", "free cancellation", "guided excursions", "all-day dining", "great loyalty perks", "central locations"],
        },
        MetaTopic::Workout => &Lexicon {
            nouns: &["home gyms", "yoga classes", "running plans", "protein powders", "resistance bands", "spin bikes", "personal trainers", "fitness apps"],
            adjectives: &["effective", "beginner-friendly", "intense", "balanced", "motivating", "compact"],
            activities: &["warm up properly", "track your progress", "rest between sessions", "stretch after training", "set realistic goals", "mix strength and cardio"],
            places: &["a neighborhood park", "your garage", "a local fitness studio", "the community pool"],
            purposes: &["beginners", "busy professionals", "marathon training", "weight loss", "older adults", "small apartments"],
            items: &["Flexora", "Ironwise", "Stridelab", "Corepulse", "Fitbloom", "Liftwell", "Zenstretch", "Pacewell", "Musclery", "Sweatline"],
            qualities: &["guided programs", "sturdy construction", "clean ingredients", "live coaching", "quiet operation", "progress tracking"],
        },
    }
}

const SENTENCES: &[&str] = &[
    "Most people start by comparing several {noun} before making a final decision.",
    "It is worth checking how {adj} the available {noun} really are in your area.",
    "A good first step is to {activity} and write down what matters most to you.",
    "Reviews from other customers can reveal how {noun} hold up over a longer period.",
    "Prices for {noun} tend to change with the season, so timing can make a real difference.",
    "You should also think about {place} when you plan the next steps.",
    "Experts often recommend that you {activity} at least once a year.",
    "Some {noun} look attractive at first but turn out to be less {adj} than expected.",
    "The most important factor is usually how well the option fits your budget and your daily routine.",
    "Many guides suggest reading the fine print on {noun} very carefully.",
    "If you are unsure, it can help to {activity} with a friend or a professional.",
    "In general, {adj} {noun} are easier to manage over the long run.",
    "Keep in mind that local rules around {place} may differ from one region to another.",
    "There is no single best answer, because every situation has its own trade-offs.",
    "Online forums are full of useful tips about {noun} and {place}.",
    "Try to set a clear goal before you {activity}.",
    "Look for {noun} with transparent terms and a simple way to cancel.",
    "Small differences in quality can add up over months of regular use.",
    "Planning ahead usually saves both time and money when dealing with {noun}.",
    "In the end, rely on your own judgement once you have gathered enough information.",
    "Many readers report that {adj} choices paid off within the first few weeks.",
    "It also helps to {activity} early instead of waiting until the last minute.",
    "Ask questions about fees, waiting times and support before you commit.",
    "The options near {place} are often more {adj} than people assume.",
    "When it comes to {purpose}, the needs can be quite different from the average case.",
    "Options aimed at {purpose} usually put simplicity first.",
];

const GERMAN_SENTENCES: &[&str] = &[
    "Die meisten Leute vergleichen zuerst mehrere Angebote und entscheiden dann in Ruhe.",
    "Es lohnt sich, die Bedingungen genau zu lesen und nicht nur auf den Preis zu achten.",
    "Viele Experten empfehlen, sich vorher gut zu informieren und die eigenen Ziele festzulegen.",
    "Außerdem ist es wichtig, dass die Lösung zu deinem Alltag und deinem Budget passt.",
    "Im Internet gibt es viele Erfahrungsberichte von anderen Kunden, die sehr hilfreich sind.",
    "Am Ende solltest du auf dein eigenes Urteil vertrauen und dir Zeit lassen.",
];

const QUERY_FRAMES: &[&str] = &[
    "best {noun} for {purpose}",
    "how to choose {noun} for {purpose}",
    "{adj} {noun} for {purpose}",
    "are {noun} worth it for {purpose}",
    "cheap {noun} near {place}",
    "top rated {noun} this year",
    "what to look for in {noun}",
];

fn fill(template: &str, lex: &Lexicon, rng: &mut ChaCha8Rng) -> String {
    let mut out = template.to_string();
    for (slot, words) in [
        ("{noun}", lex.nouns),
        ("{adj}", lex.adjectives),
        ("{activity}", lex.activities),
        ("{place}", lex.places),
        ("{purpose}", lex.purposes),
    ] {
        while out.contains(slot) {
            out = out.replacen(slot, words[rng.gen_range(0..words.len())], 1);
        }
    }
    out
}

/// Distinct synthetic queries for `topic`, ids `{topic}-{:04}`.
pub fn synthetic_queries(topic: MetaTopic, count: usize, seed: u64) -> Vec<Query> {
    let lex = lexicon(topic);
    let mut all = Vec::new();
    for frame in QUERY_FRAMES {
        let nouns = lex.nouns.iter();
        for noun in nouns {
            let variants: Vec<String> = if frame.contains("{purpose}") {
                lex.purposes.iter().map(|p| frame.replace("{purpose}", p)).collect()
            } else if frame.contains("{place}") {
                lex.places.iter().map(|p| frame.replace("{place}", p)).collect()
            } else {
                vec![frame.to_string()]
            };
            for v in variants {
                if v.contains("{adj}") {
                    for a in lex.adjectives {
                        all.push(v.replace("{noun}", noun).replace("{adj}", a));
                    }
                } else {
                    all.push(v.replace("{noun}", noun));
                }
            }
        }
    }
    all.sort();
    all.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(topic.as_str().as_bytes()));
    all.shuffle(&mut rng);
    all.into_iter()
        .take(count)
        .enumerate()
        .map(|(i, text)| Query {
            id: format!("{}-{:04}", topic.as_str(), i),
            text,
            topic,
        })
        .collect()
}

/// Ad vocabulary of `topic`, ids `{topic}-c{:03}`.
pub fn synthetic_vocabulary(topic: MetaTopic) -> Vec<AdCandidate> {
    let lex = lexicon(topic);
    lex.items
        .iter()
        .enumerate()
        .map(|(i, item)| AdCandidate {
            id: format!("{}-c{:03}", topic.as_str(), i),
            topic,
            item: item.to_string(),
            qualities: (0..3)
                .map(|k| lex.qualities[(i + 2 * k) % lex.qualities.len()].to_string())
                .collect(),
        })
        .collect()
}

/// Vocabulary review file content in the format read by the vocabulary loader.
pub fn synthetic_vocabulary_file(topic: MetaTopic) -> String {
    let entries: Vec<crate::vocabulary::DraftEntry> = synthetic_vocabulary(topic)
        .into_iter()
        .map(|c| crate::vocabulary::DraftEntry {
            item: c.item,
            qualities: c.qualities,
        })
        .collect();
    crate::vocabulary::render_review_file(topic, &entries)
}

/// Deterministic stand-in for a conversational search engine. The response
/// depends only on the query text. About 5% of responses are too short, 5%
/// too long and 3% are not English, so the retention filter has work to do.
#[derive(Debug, Clone)]
pub struct SyntheticSearchClient {
    topics: HashMap<String, MetaTopic>,
    seed: u64,
}

impl SyntheticSearchClient {
    pub fn new(queries: &[Query], seed: u64) -> Self {
        Self {
            topics: queries.iter().map(|q| (q.text.clone(), q.topic)).collect(),
            seed,
        }
    }

    pub fn respond(&self, query_text: &str, topic: MetaTopic) -> String {
        let lex = lexicon(topic);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(query_text.as_bytes()));
        let roll: f64 = rng.gen();
        if roll < 0.03 {
            let mut s: Vec<&str> = GERMAN_SENTENCES.to_vec();
            s.shuffle(&mut rng);
            return s.join(" ");
        }
        let n = if roll < 0.08 {
            rng.gen_range(2..=3)
        } else if roll < 0.13 {
            rng.gen_range(13..=15)
        } else {
            rng.gen_range(4..=12)
        };
        let picks = rand::seq::index::sample(&mut rng, SENTENCES.len(), n).into_vec();
        let mut sentences: Vec<String> = picks.iter().map(|&i| fill(SENTENCES[i], lex, &mut rng)).collect();
        // The first sentence echoes the query so responses within a topic differ.
        sentences[0] = format!("Here is an overview for the question \"{query_text}\".");
        sentences.join(" ")
    }
}

impl SearchClient for SyntheticSearchClient {
    fn capabilities(&self) -> ClientCapabilities {
        ClientCapabilities {
            engine: Engine::Synthetic,
            max_requests_per_minute: None,
        }
    }

    fn fetch(&self, query_text: &str, _timeout: Duration) -> std::result::Result<String, ClientError> {
        let topic = self
            .topics
            .get(query_text)
            .ok_or_else(|| ClientError::Request(format!("unknown synthetic query '{query_text}'")))?;
        Ok(self.respond(query_text, *topic))
    }
}

/// Per-topic ad templates that share topic vocabulary, so ads of the same
/// topic resemble each other more than ads of different topics.
pub fn topic_template_bank() -> TemplateBank {
    let mut bank = TemplateBank {
        version: "synthetic-topic-templates-v1".into(),
        ..TemplateBank::default()
    };
    for topic in MetaTopic::ALL {
        let lex = lexicon(topic);
        let (a, b) = (lex.nouns[0], lex.nouns[1]);
        bank.per_topic.insert(
            topic,
            vec![
                format!(", and for {a} with {{quality}} {{item}} is a great choice"),
                format!(", and among {a} and {b} {{item}} brings {{quality}}"),
                format!("; {{item}} {b} offer {{quality}} as well"),
            ],
        );
    }
    bank
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub queries_per_topic: usize,
    pub seed: u64,
    pub bank: TemplateBank,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            queries_per_topic: 110,
            seed: 7,
            bank: TemplateBank::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub queries: Vec<Query>,
    pub responses: Vec<SearchResponse>,
    pub filter_report: RejectionReport,
    pub candidates: Vec<AdCandidate>,
    pub ad_records: Vec<AdInsertionRecord>,
}

/// Collect, filter and template-inject one ad per retained response.
pub fn build_synthetic_corpus(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let queries: Vec<Query> = MetaTopic::ALL
        .into_iter()
        .flat_map(|t| synthetic_queries(t, config.queries_per_topic, config.seed))
        .collect();
    let client = SyntheticSearchClient::new(&queries, config.seed);
    let options = CollectOptions {
        repeats: 1,
        ..CollectOptions::default()
    };
    let collection = collect_responses(&queries, &client, options)?;
    let segmenter = Segmenter::default();
    let filtered = filter_responses(
        &collection.responses,
        &segmenter,
        &StopwordIdentifier::default(),
        &FilterOptions::default(),
    );
    let candidates: Vec<AdCandidate> = MetaTopic::ALL.into_iter().flat_map(synthetic_vocabulary).collect();
    let (ad_records, rejected) =
        template_inject_corpus(&queries, &filtered.retained, &candidates, config.seed, &config.bank, &segmenter)?;
    if let Some(r) = rejected.first() {
        return Err(Error::precondition(format!("{}: {}", r.record_id, r.detail)));
    }
    Ok(SyntheticCorpus {
        queries,
        responses: filtered.retained,
        filter_report: filtered.report,
        candidates,
        ad_records,
    })
}
