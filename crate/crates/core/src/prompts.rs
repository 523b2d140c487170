//! Fixed prompt templates. Placeholders are `{$name}` and are substituted in a
//! single left-to-right pass; substituted text is never re-scanned.

/// Appended to the model input so it emits think/rethink/answer traces.
pub const PROMPT_SUFFIX: &str = "First, think between <think> and </think> while output necessary coordinates needed to answer the question in JSON with key 'bbox_2d'. Then, based on the thinking contents and coordinates, rethink between <rethink> </rethink> and then answer the question after <answer>.";

pub const ANSWER_JUDGE_TEMPLATE: &str = "You are responsible for proofreading the answers, you need to give a score to the model\u{2019}s answer by referring to the standard answer, based on the given question. The full score is 1 point and the minimum score is 0 points. Please output the score in the json form \"{score: <score>}\". The evaluation criteria require that the closer the model\u{2019}s answer is to the standard answer, the higher the score.

Question: {$question}

Standard answer: {$answer}

Model\u{2019}s answer: {$predicted_content}
";

pub const CORRELATION_TEMPLATE: &str =
    "Please decide which image has the bounding boxes that match the following description:
{$grounded_reasoning_masked}

Reply with exactly \"Image 0\" or \"Image 1\".
";

/// Substitutes `{$key}` placeholders. Unknown placeholders are left as-is.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{$") {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let hit = vars.iter().find_map(|(key, value)| {
            let body = tail.strip_prefix("{$")?.strip_prefix(key)?;
            body.starts_with('}').then(|| (value, 2 + key.len() + 1))
        });
        match hit {
            Some((value, consumed)) => {
                out.push_str(value);
                rest = &tail[consumed..];
            }
            None => {
                out.push_str("{$");
                rest = &tail[2..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_answer_prompt(question: &str, gt_answer: &str, predicted: &str) -> String {
    render_template(
        ANSWER_JUDGE_TEMPLATE,
        &[
            ("question", question),
            ("answer", gt_answer),
            ("predicted_content", predicted),
        ],
    )
}

pub fn render_correlation_prompt(masked_reasoning: &str) -> String {
    render_template(
        CORRELATION_TEMPLATE,
        &[("grounded_reasoning_masked", masked_reasoning)],
    )
}
