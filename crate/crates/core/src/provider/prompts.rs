//! Prompt templates for every model-backed task.

use crate::persona::{DimensionSchema, PersonaVector};

use super::chat::FillSlot;

pub fn prioritize_dims(topic: &str, schema: &DimensionSchema, max_depth: usize) -> String {
    let listing: Vec<String> =
        schema.dimensions.iter().enumerate().map(|(i, d)| format!("{}. {}", i + 1, d.name)).collect();
    format!(
        "You are a computational sociologist. Your task is to determine the most important user profile \
dimensions for a social network simulation on the topic \"{topic}\".\n\
\n\
Please identify up to {max_depth} most critical demographic dimensions from the table below and rank them \
in descending order of their influence on people's opinions and behaviors related to this topic.\n\
The dimensions in the table are:\n\
{listing}\n\
\n\
Please output a list in the following JSON format strictly:\n\
{{\n    \"dimensions\": [\"Dimension 1\", \"Dimension 2\", \"Dimension 3\", \"Dimension 4\"]\n}}\n",
        listing = listing.join("\n"),
    )
}

/// Renders the conditioning context of a partial path.
pub fn context_string(topic: &str, context: &PersonaVector, schema: &DimensionSchema) -> String {
    if context.is_empty() {
        return format!("Given the topic \"{topic}\"");
    }
    let parts: Vec<String> = context
        .iter()
        .map(|a| {
            let name = schema.get(&a.dimension_id).map(|d| d.name.as_str()).unwrap_or(&a.dimension_id);
            format!("{name} = {}", a.label)
        })
        .collect();
    format!("Given the topic \"{topic}\" and a person with {}", parts.join(", "))
}

pub fn allowed_clause(allowed: Option<&[String]>) -> String {
    match allowed {
        Some(values) => format!(
            "You MUST choose values ONLY from the following allowed list: [{}]",
            values.iter().map(|v| format!("\"{v}\"")).collect::<Vec<_>>().join(", ")
        ),
        None => String::new(),
    }
}

pub fn infer_conditional(context_str: &str, dimension: &str, max_branches: usize, allowed_clause: &str) -> String {
    format!(
        "You are a computational sociologist. {context_str}, please generate a plausible probability \
distribution for the dimension \"{dimension}\".\n\
\n\
List the primary values for this dimension and assign a probability to each.\n\
Provide the most relevant and meaningful values for this context - you can provide anywhere from 1 to \
{max_branches} values, depending on what makes sense for the given context.\n\
\n\
**IMPORTANT**: Choose the number of values based on what is actually meaningful and significant for this \
specific context.\n\
- If only 1-3 categories are truly relevant, use only 1-3 values.\n\
- If more categories are meaningful, you can use up to {max_branches} values.\n\
- Do NOT artificially inflate the number of categories just to reach the maximum.\n\
\n\
Focus on the most significant categories rather than trying to fill up to the maximum number.\n\
The sum of all probabilities must be exactly 1.0.\n\
\n\
Strictly adhere to the following JSON format for your output:\n\
{{\n    \"distribution\": [\n        {{\"value\": \"Value 1\", \"probability\": 0.xx}},\n        ...\n    ]\n}}\n\
{allowed_clause}\n"
    )
}

fn constraint_lines(slots: &[FillSlot], allow_unknown: bool) -> String {
    slots
        .iter()
        .map(|s| match (&s.allowed, allow_unknown) {
            (Some(values), false) => format!("- {}: {}", s.name, values.join(", ")),
            (Some(values), true) => format!("- {}: {}, Unknown", s.name, values.join(", ")),
            (None, false) => format!("- {}: any specific value", s.name),
            (None, true) => format!("- {}: any specific value, or Unknown", s.name),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn template_json(slots: &[FillSlot]) -> String {
    let fields: Vec<String> = slots.iter().map(|s| format!("    \"{}\": \"__FILL__\"", s.name)).collect();
    format!("{{\n{}\n}}", fields.join(",\n"))
}

/// Constrained generation of one agent whose path attributes are fixed.
pub fn generate_persona(
    topic: &str,
    fixed: &PersonaVector,
    schema: &DimensionSchema,
    fill: &[FillSlot],
    variant: usize,
) -> String {
    let fixed_lines: Vec<String> = fixed
        .iter()
        .map(|a| {
            let name = schema.get(&a.dimension_id).map(|d| d.name.as_str()).unwrap_or(&a.dimension_id);
            format!("- {name}: {}", a.label)
        })
        .collect();
    let fixed_block = if fixed_lines.is_empty() { "(none)".to_string() } else { fixed_lines.join("\n") };
    let mut all_slots: Vec<FillSlot> = fixed
        .iter()
        .map(|a| FillSlot {
            dimension: a.dimension_id.clone(),
            name: schema.get(&a.dimension_id).map(|d| d.name.clone()).unwrap_or_else(|| a.dimension_id.clone()),
            allowed: None,
        })
        .collect();
    all_slots.extend(fill.iter().cloned());
    format!(
        "You are a computational sociologist building a realistic agent for a simulation on the topic \
\"{topic}\".\n\
\n\
**FIXED ATTRIBUTES** (keep these values exactly as given):\n\
{fixed_block}\n\
\n\
**ATTRIBUTES TO FILL**, choosing values that are coherent with the fixed attributes and plausible for \
this topic:\n\
{constraints}\n\
\n\
**IMPORTANT CONSTRAINTS**:\n\
- Do NOT change any fixed attribute.\n\
- Where a list of values is given, choose ONLY from that list.\n\
- Every attribute must have a concrete value.\n\
\n\
This is agent #{variant} sharing these fixed attributes; vary the remaining attributes realistically.\n\
\n\
Return a JSON object of the form {{\"profile\": <profile>}} where <profile> matches this template:\n\
{template}\n",
        constraints = constraint_lines(fill, false),
        template = template_json(&all_slots),
    )
}

/// End-to-end generation of a batch of personas for a topic.
pub fn generate_batch(topic: &str, fill: &[FillSlot], count: usize, batch: usize) -> String {
    format!(
        "You are a computational sociologist. Generate {count} realistic and diverse user profiles of people \
who take part in discussions on the topic \"{topic}\".\n\
\n\
**ALLOWED VALUES (choose ONLY from these lists)**:\n\
{constraints}\n\
\n\
Each profile must exactly match this template structure:\n\
{template}\n\
\n\
This is batch #{batch}. Return a JSON object of the form {{\"personas\": [<profile>, ...]}} with exactly \
{count} profiles.\n",
        constraints = constraint_lines(fill, false),
        template = template_json(fill),
    )
}

/// Text-to-persona inference from a user's posts.
pub fn text_to_persona(theme: &str, fill: &[FillSlot], user_text: &str) -> String {
    let names: Vec<&str> = fill.iter().map(|s| s.name.as_str()).collect();
    let dimension_info = format!("\nDimensions to infer: {}.\n", names.join(", "));
    format!(
        "You are a computational sociologist analyzing social media posts to generate realistic user profiles.\n\
\n\
**TASK**: Generate a user profile based on the provided social media posts from the \"{theme}\" \
community.{dimension_info}\n\
**USER'S POSTS**:\n\
{user_text}\n\
\n\
**INSTRUCTIONS**:\n\
1. Analyze the user's posts to infer their demographic characteristics, Make reasonable inferences based \
on the content, language, and context of the posts\n\
2. Generate a realistic user profile that matches the template structure, Only generate values for the \
dimensions specified in the template\n\
3. Replace all \"__FILL__\" placeholders with appropriate values, Ensure all values are chosen from the \
allowed constraints below\n\
\n\
\n\
**ALLOWED VALUES (choose ONLY from these lists)**:\n\
{constraints}\n\
\n\
**IMPORTANT CONSTRAINTS**:\n\
- You MUST choose values ONLY from the allowed lists above, Do NOT invent new values or categories\n\
- If the posts give insufficient clues for a dimension, return \"Unknown\" for it\n\
- Consider the theme context: \"{theme}\" community members may have specific characteristics\n\
- Only generate the dimensions specified in the template - do not add extra fields\n\
\n\
**OUTPUT FORMAT**:\n\
Return a JSON object that exactly matches this template structure:\n\
{template}\n\
\n\
**ANALYSIS GUIDELINES**:\n\
- Age: Infer from language style, references to life events, generational markers\n\
- Education: Consider vocabulary, topic complexity, academic references\n\
- Country: Look for location mentions, cultural references, language patterns\n\
- Occupation: Analyze professional topics, work-related discussions\n\
- Religion: Consider religious references, holidays, cultural practices\n\
- Other fields: Make reasonable inferences based on available information\n\
\n\
Generate the user profile now:\n",
        constraints = constraint_lines(fill, true),
        template = template_json(fill),
    )
}

pub fn judge_archetypes(dom_snippet: &str, theme_context: &str) -> String {
    format!(
        "You are an expert computational sociologist.\n\
\n\
DOMINANT CLUSTERS:\n\
{dom_snippet}\n\
\n\
THEME / TOPIC CONTEXT:\n\
{theme_context}\n\
\n\
Question:\n\
Are these dominant archetypes (typical groups) the core stakeholders for this topic?\n\
Consider whether age, education, occupation, country, language and other demographics\n\
form plausible and meaningful typical user types that align with sociological expectations.\n\
\n\
Scoring guide:\n\
- 1: Archetypes are completely irrelevant or implausible for this topic\n\
- 3: Archetypes are somewhat relevant but have some issues\n\
- 5: Archetypes are highly relevant and plausible as core stakeholders for this topic\n\
\n\
Return format (must be a valid JSON object):\n\
{{\n\"archetype_coherence_score\": <int 1-5>,\n\"reasoning\": \"<short explanation>\",\n}}\n"
    )
}

pub fn judge_individual(context: &str, user_profile: &str) -> String {
    format!(
        "You are a computational social scientist who studies population structure.\n\
\n\
Given the following theme/topic and a single agent profile, evaluate whether the\n\
combination of demographic attributes (such as age, education, occupation, country, etc.)\n\
is internally consistent and realistic for that theme.\n\
\n\
Topic:\n\
{context}\n\
\n\
Agent Profile (JSON):\n\
{user_profile}\n\
\n\
Your task:\n\
- Please only judge from the perspective of \"logical consistency\" and give a rating of 1-5 to indicate \
whether the attribute combination of the agent is reasonable and consistent in this real-world topic:\n\
    1 = Very unreasonable (with obvious contradictions)\n\
    3 = Generally reasonable (with some doubts but acceptable)\n\
    5 = Very reasonable (there is no obvious contradiction)\n\
\n\
Return format (must be a valid JSON object):\n\
{{\n  \"internal_consistency_score\": <int 1-5>,\n  \"reasoning\": \"<Short text explaining the main reason for judgment>\"\n}}\n"
    )
}
