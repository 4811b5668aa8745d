//! Prompt wording for the synthesis and improvement stages. Rendered output
//! is pinned by the golden files under `prompts/`.

use super::template::{PromptTemplate, Section};

const USER_PROBLEM: Section = Section { heading: "User Problem", body: "{{user_problem}}" };

const OUTLINE_FORMAT: &str = "A numbered list with one step per line:\n\
1. <step title>: <one-sentence summary of the step>\n\
2. <step title>: <one-sentence summary of the step>\n\
Do not add any other text.";

pub static OUTLINE: PromptTemplate = PromptTemplate {
    name: "outline",
    placeholders: &["user_problem", "context"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Background Knowledge", body: "{{context}}" },
        Section {
            heading: "Target",
            body: "Analyze the user problem and design a preliminary algorithm outline that solves it.",
        },
        Section {
            heading: "Rules",
            body: "1. Actively search for advanced algorithms for this kind of sensor data with the web_search tool throughout the process.\n\
2. Filter out background knowledge and search results that are irrelevant to the user problem.\n\
3. Every step must be concrete enough to be implemented by one or more functions.\n\
4. Use at least two steps.",
        },
        Section { heading: "Response Format", body: OUTLINE_FORMAT },
    ],
};

pub static DETAILED_DESIGN: PromptTemplate = PromptTemplate {
    name: "detailed_design",
    placeholders: &["user_problem", "outline", "context"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Algorithm Outline", body: "{{outline}}" },
        Section { heading: "Background Knowledge", body: "{{context}}" },
        Section {
            heading: "Target",
            body: "Elaborate on each step of the outline with detailed technologies and algorithms. \
Decompose the task into subtasks that can each be implemented as one function.",
        },
        Section {
            heading: "Rules",
            body: "1. Every outline step must be covered by at least one subtask.\n\
2. Give every subtask a unique snake_case function name.\n\
3. State the inputs and outputs of every function precisely, including types and shapes.\n\
4. Prefer well-established packages that are available for the target interpreter.",
        },
        Section {
            heading: "Response Format",
            body: "One block per subtask, in order:\n\
### Step <outline step number>: <subtask title>\n\
Function: <function_name>\n\
Actions:\n\
- <concrete action>\n\
- <concrete action>\n\
IO: <inputs and outputs of the function>\n\
When one outline step needs several subtasks, number them `### Step <n>.1:`, `### Step <n>.2:` and so on.",
        },
    ],
};

pub static MODULE_CODEGEN: PromptTemplate = PromptTemplate {
    name: "module_codegen",
    placeholders: &["user_problem", "design", "subtask", "function_name"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Detailed Design", body: "{{design}}" },
        Section { heading: "Subtask", body: "{{subtask}}" },
        Section {
            heading: "Target",
            body: "Write the Python function `{{function_name}}` that implements the subtask above, \
with a clear name, signature and input/output specification.",
        },
        Section {
            heading: "Rules",
            body: "1. Do not generate null functions: every function needs a complete implementation, never only `pass`, `...` or `raise NotImplementedError`.\n\
2. Only import packages that exist and only call functions that are defined, imported or built in. Verify their availability with the web_search tool when unsure.\n\
3. Functions of other subtasks in the detailed design may be called by name.\n\
4. Add comments that explain the implementation.",
        },
        Section {
            heading: "Response Format",
            body: "One fenced ```python code block containing the imports and the function definition.",
        },
    ],
};

pub static INTEGRATION: PromptTemplate = PromptTemplate {
    name: "integration",
    placeholders: &["user_problem", "modules", "interpreter_command"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Code Segments", body: "{{modules}}" },
        Section {
            heading: "Target",
            body: "Integrate the code segments above into one cohesive, directly executable Python program.",
        },
        Section {
            heading: "Rules",
            body: "1. Make variable names and function interfaces consistent across all modules.\n\
2. Do not generate null functions and do not call functions that are neither defined nor imported.\n\
3. Add a main function so the program runs from the command console as `{{interpreter_command}}`, where {input} is the dataset path.\n\
4. At the end of the run, print exactly one line `FINAL_METRIC: <name>=<value>` reporting the metric requested in the output specification, for example `FINAL_METRIC: accuracy=0.9321`.\n\
5. Write user documentation in Markdown explaining how to install, execute and troubleshoot the program.",
        },
        Section {
            heading: "Response Format",
            body: "First one fenced ```python block with the complete program. \
Then the documentation inside a block fenced with four backticks: ````markdown",
        },
    ],
};

pub static DEBUG: PromptTemplate = PromptTemplate {
    name: "debug",
    placeholders: &["user_problem", "source", "error_log", "notes"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Program", body: "```python\n{{source}}\n```" },
        Section { heading: "Execution Log", body: "{{error_log}}" },
        Section { heading: "User Instructions", body: "{{notes}}" },
        Section {
            heading: "Target",
            body: "The program above failed when executed. Fix it so that it runs successfully.",
        },
        Section {
            heading: "Rules",
            body: "1. Fix the root cause reported in the execution log.\n\
2. Keep the command-line interface and the final `FINAL_METRIC: <name>=<value>` output line.\n\
3. Do not generate null functions and do not call undefined functions.",
        },
        Section {
            heading: "Response Format",
            body: "One fenced ```python block containing the complete fixed program.",
        },
    ],
};

pub static OPTIMIZE: PromptTemplate = PromptTemplate {
    name: "optimize",
    placeholders: &["user_problem", "outline", "history", "metric", "feedback"],
    sections: &[
        USER_PROBLEM,
        Section { heading: "Current Algorithm Outline", body: "{{outline}}" },
        Section { heading: "Previous Versions", body: "{{history}}" },
        Section { heading: "Latest Result", body: "{{metric}}" },
        Section { heading: "User Instructions", body: "{{feedback}}" },
        Section {
            heading: "Target",
            body: "Improve the performance of the program by integrating more advanced algorithms. \
Refine the current outline accordingly.",
        },
        Section {
            heading: "Rules",
            body: "1. Use the web_search tool to find methods from academic papers and relevant webpages that achieve higher accuracy.\n\
2. Follow the user instructions when there are any.\n\
3. Every step must be concrete enough to be implemented by one or more functions.\n\
4. Use at least two steps.",
        },
        Section { heading: "Response Format", body: OUTLINE_FORMAT },
    ],
};
