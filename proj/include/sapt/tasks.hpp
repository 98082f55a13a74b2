// Deterministic generators for the built-in instruction-task family, plus
// JSONL dataset I/O and task-order files. Each record is (instruction,
// input, output) and every output is the unique answer under the task rule.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sapt/errors.hpp"
#include "sapt/rng.hpp"

namespace sapt {

enum class TaskKind { generation, classification };
enum class ScorerKind { rouge_l, accuracy };

struct Record {
    std::string instruction;
    std::string input;
    std::string output;
};

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::generation;
    ScorerKind scorer = ScorerKind::rouge_l;
    std::string instruction;
    std::string category;  // used for grouped unseen-task reports
    std::uint64_t seed = 0;
    std::size_t train_n = 1000;
    std::size_t val_n = 100;
    std::size_t test_n = 100;
};

struct Splits {
    std::vector<Record> train;
    std::vector<Record> validation;
    std::vector<Record> test;
};

namespace tasks_detail {

inline std::string random_lowercase(Rng& rng, std::size_t lo, std::size_t hi) {
    const std::size_t len = lo + rng.uniform_index(hi - lo + 1);
    std::string s(len, 'a');
    for (char& c : s) c = static_cast<char>('a' + rng.uniform_index(26));
    return s;
}

inline std::string random_words(Rng& rng, std::size_t min_words, std::size_t max_words) {
    const std::size_t n = min_words + rng.uniform_index(max_words - min_words + 1);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += random_lowercase(rng, 2, 5);
    }
    return s;
}

inline std::string random_digits(Rng& rng, std::size_t lo, std::size_t hi) {
    const std::size_t len = lo + rng.uniform_index(hi - lo + 1);
    std::string s(len, '0');
    for (char& c : s) c = static_cast<char>('0' + rng.uniform_index(10));
    return s;
}

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

}  // namespace tasks_detail

// Task rules. Applying the rule to a record's input must reproduce its output.
inline std::string apply_task_rule(const std::string& task, const std::string& input) {
    using namespace tasks_detail;
    if (task == "copy") return input;
    if (task == "reverse") return std::string(input.rbegin(), input.rend());
    if (task == "sort-letters") {
        std::string s = input;
        std::sort(s.begin(), s.end());
        return s;
    }
    if (task == "uppercase") {
        std::string s = input;
        for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return s;
    }
    if (task == "last-word") {
        const auto pos = input.find_last_of(' ');
        return pos == std::string::npos ? input : input.substr(pos + 1);
    }
    if (task == "modular-sum") {
        int total = 0;
        for (char c : input) {
            if (c >= '0' && c <= '9') total += c - '0';
        }
        return std::string(1, static_cast<char>('0' + total % 10));
    }
    if (task == "parity") {
        const auto count = std::count(input.begin(), input.end(), 'a');
        return count % 2 == 0 ? "even" : "odd";
    }
    if (task == "vowel-majority") {
        std::size_t vowels = 0;
        for (char c : input) {
            if (is_vowel(c)) ++vowels;
        }
        return 2 * vowels > input.size() ? "yes" : "no";
    }
    if (task == "length-parity") return input.size() % 2 == 0 ? "even" : "odd";
    throw ConfigError("unknown task name: " + task);
}

inline const std::vector<std::string>& builtin_task_names() {
    static const std::vector<std::string> names{"copy",        "reverse", "sort-letters",   "uppercase",   "last-word",
                                                "modular-sum", "parity",  "vowel-majority", "length-parity"};
    return names;
}

inline TaskSpec builtin_task(const std::string& name, std::uint64_t seed, std::size_t train_n = 1000,
                             std::size_t val_n = 100, std::size_t test_n = 100) {
    TaskSpec spec;
    spec.name = name;
    spec.seed = seed;
    spec.train_n = train_n;
    spec.val_n = val_n;
    spec.test_n = test_n;
    if (name == "copy") {
        spec.instruction = "Copy the input string.";
        spec.category = "echo";
    } else if (name == "reverse") {
        spec.instruction = "Reverse the input string.";
        spec.category = "rearrange";
    } else if (name == "sort-letters") {
        spec.instruction = "Sort the letters of the input.";
        spec.category = "rearrange";
    } else if (name == "uppercase") {
        spec.instruction = "Uppercase the input string.";
        spec.category = "case";
    } else if (name == "last-word") {
        spec.instruction = "Output the last word of the input.";
        spec.category = "extract";
    } else if (name == "modular-sum") {
        spec.instruction = "Sum the digits modulo ten.";
        spec.category = "arithmetic";
    } else if (name == "parity") {
        spec.instruction = "Is the count of the letter a even or odd?";
        spec.category = "count";
    } else if (name == "vowel-majority") {
        spec.instruction = "Are there more vowels than consonants?";
        spec.category = "count";
    } else if (name == "length-parity") {
        spec.instruction = "Is the input length even or odd?";
        spec.category = "count";
    } else {
        throw ConfigError("unknown task name: " + name);
    }
    if (name == "parity" || name == "length-parity" || name == "vowel-majority") {
        spec.kind = TaskKind::classification;
        spec.scorer = ScorerKind::accuracy;
    }
    return spec;
}

inline std::string make_task_input(const std::string& task, Rng& rng) {
    using namespace tasks_detail;
    if (task == "last-word") return random_words(rng, 2, 3);
    if (task == "modular-sum") return random_digits(rng, 3, 6);
    return random_lowercase(rng, 4, 10);
}

// Deterministic dataset: unique inputs are drawn first, then dealt into the
// train/validation/test splits, so the splits are disjoint by construction.
inline Splits generate_task(const TaskSpec& spec) {
    if (spec.instruction.empty()) throw ConfigError("generate_task: empty instruction for task " + spec.name);
    Rng rng(Rng::derive(spec.seed, "task:" + spec.name));
    const std::size_t total = spec.train_n + spec.val_n + spec.test_n;
    std::vector<std::string> inputs;
    std::set<std::string> seen;
    std::size_t attempts = 0;
    while (inputs.size() < total) {
        std::string candidate = make_task_input(spec.name, rng);
        if (seen.insert(candidate).second) inputs.push_back(std::move(candidate));
        if (++attempts > total * 200) {
            throw ConfigError("generate_task: input space too small for requested sizes of task " + spec.name);
        }
    }
    Splits splits;
    auto emit = [&](std::vector<Record>& dst, std::size_t begin, std::size_t count) {
        dst.reserve(count);
        for (std::size_t i = begin; i < begin + count; ++i) {
            dst.push_back(Record{spec.instruction, inputs[i], apply_task_rule(spec.name, inputs[i])});
        }
    };
    emit(splits.train, 0, spec.train_n);
    emit(splits.validation, spec.train_n, spec.val_n);
    emit(splits.test, spec.train_n + spec.val_n, spec.test_n);
    return splits;
}

// ---------------------------------------------------------------------------
// JSONL dataset files: one {"instruction":..., "input":..., "output":...}
// object per line.

inline void save_jsonl(const std::string& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_jsonl: cannot open " + path + " for writing");
    for (const Record& r : records) {
        nlohmann::json j{{"instruction", r.instruction}, {"input", r.input}, {"output", r.output}};
        out << j.dump() << '\n';
    }
}

inline std::vector<Record> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_jsonl: cannot open " + path);
    std::vector<Record> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw ParseError("load_jsonl: malformed JSON at " + path + ":" + std::to_string(line_no));
        }
        for (const char* key : {"instruction", "input", "output"}) {
            if (!j.contains(key) || !j[key].is_string()) {
                throw ParseError("load_jsonl: missing or non-string \"" + std::string(key) + "\" at " + path + ":" +
                                 std::to_string(line_no));
            }
        }
        records.push_back(Record{j["instruction"], j["input"], j["output"]});
    }
    return records;
}

// Order files: one task name per line; an optional second whitespace-separated
// field names the category (used by unseen-task reports). '#' starts a comment.
struct OrderEntry {
    std::string name;
    std::string category;
};

inline std::vector<OrderEntry> load_order_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("load_order_file: cannot open " + path);
    std::vector<OrderEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        OrderEntry e;
        if (!(ss >> e.name)) continue;
        ss >> e.category;
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw ConfigError("load_order_file: no tasks listed in " + path);
    return entries;
}

}  // namespace sapt
