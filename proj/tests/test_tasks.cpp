#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "sapt/tasks.hpp"
#include "sapt/tokenizer.hpp"

using namespace sapt;

TEST(TaskRules, SpotChecks) {
    EXPECT_EQ(apply_task_rule("copy", "abc"), "abc");
    EXPECT_EQ(apply_task_rule("reverse", "abc"), "cba");
    EXPECT_EQ(apply_task_rule("sort-letters", "dcba"), "abcd");
    EXPECT_EQ(apply_task_rule("uppercase", "abc"), "ABC");
    EXPECT_EQ(apply_task_rule("last-word", "foo bar baz"), "baz");
    EXPECT_EQ(apply_task_rule("modular-sum", "374"), "4");
    EXPECT_EQ(apply_task_rule("parity", "aba"), "even");
    EXPECT_EQ(apply_task_rule("parity", "abca"), "even");
    EXPECT_EQ(apply_task_rule("parity", "abc"), "odd");
    EXPECT_EQ(apply_task_rule("vowel-majority", "aaab"), "yes");
    EXPECT_EQ(apply_task_rule("vowel-majority", "bbba"), "no");
    EXPECT_EQ(apply_task_rule("length-parity", "ab"), "even");
    EXPECT_THROW(apply_task_rule("nonsense", "x"), ConfigError);
}

TEST(TaskGeneration, EveryRecordIsSolvable) {
    for (const std::string& name : builtin_task_names()) {
        TaskSpec spec = builtin_task(name, 42, 50, 10, 10);
        Splits splits = generate_task(spec);
        ASSERT_EQ(splits.train.size(), 50u);
        ASSERT_EQ(splits.validation.size(), 10u);
        ASSERT_EQ(splits.test.size(), 10u);
        for (const auto* split : {&splits.train, &splits.validation, &splits.test}) {
            for (const Record& r : *split) {
                EXPECT_FALSE(r.instruction.empty());
                EXPECT_FALSE(r.output.empty());
                EXPECT_EQ(apply_task_rule(name, r.input), r.output) << name << " input=" << r.input;
            }
        }
    }
}

TEST(TaskGeneration, SplitsAreDisjoint) {
    TaskSpec spec = builtin_task("reverse", 7, 200, 40, 40);
    Splits splits = generate_task(spec);
    std::set<std::string> inputs;
    for (const auto* split : {&splits.train, &splits.validation, &splits.test}) {
        for (const Record& r : *split) {
            EXPECT_TRUE(inputs.insert(r.input).second) << "duplicate input across splits: " << r.input;
        }
    }
}

TEST(TaskGeneration, SameSeedSameSplits) {
    TaskSpec spec = builtin_task("parity", 99, 30, 5, 5);
    Splits a = generate_task(spec);
    Splits b = generate_task(spec);
    ASSERT_EQ(a.train.size(), b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].input, b.train[i].input);
    for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].input, b.test[i].input);
}

TEST(Tokenizer, RoundTrip) {
    Vocab vocab;
    for (const std::string s : {"hello world", "", "a[SEP]b", "[GEN]Reverse the input.[SEP]abc[EOS]", "x y z 0123 ~"}) {
        EXPECT_EQ(vocab.detokenize(vocab.tokenize(s)), s);
    }
}

TEST(Tokenizer, ReservedTokensAreSingleIds) {
    Vocab vocab;
    EXPECT_EQ(vocab.tokenize("[GEN]"), (std::vector<int>{Vocab::gen_id}));
    EXPECT_EQ(vocab.tokenize("[SEP]"), (std::vector<int>{Vocab::sep_id}));
    EXPECT_EQ(vocab.tokenize("[EOS]"), (std::vector<int>{Vocab::eos_id}));
    EXPECT_EQ(vocab.tokenize("[PAD]"), (std::vector<int>{Vocab::pad_id}));
    EXPECT_EQ(vocab.tokenize("").size(), 0u);
}

TEST(Tokenizer, OutOfVocabularyThrows) {
    Vocab vocab;
    EXPECT_THROW(vocab.tokenize("caf\xc3\xa9"), InputError);
    EXPECT_THROW(vocab.tokenize(std::string(1, '\t')), InputError);
}

TEST(Jsonl, RoundTrip) {
    TaskSpec spec = builtin_task("copy", 5, 100, 0, 0);
    Splits splits = generate_task(spec);
    const std::string path = ::testing::TempDir() + "sapt_jsonl_roundtrip.jsonl";
    save_jsonl(path, splits.train);
    auto loaded = load_jsonl(path);
    ASSERT_EQ(loaded.size(), splits.train.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(loaded[i].instruction, splits.train[i].instruction);
        EXPECT_EQ(loaded[i].input, splits.train[i].input);
        EXPECT_EQ(loaded[i].output, splits.train[i].output);
    }
    std::remove(path.c_str());
}

TEST(Jsonl, MissingKeyNamesLine) {
    const std::string path = ::testing::TempDir() + "sapt_jsonl_bad.jsonl";
    {
        std::ofstream out(path);
        out << R"({"instruction":"i","input":"x","output":"y"})" << '\n';
        out << R"({"instruction":"i","input":"x"})" << '\n';
    }
    try {
        load_jsonl(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
    }
    std::remove(path.c_str());
}

TEST(Jsonl, Utf8ContentPreserved) {
    const std::string path = ::testing::TempDir() + "sapt_jsonl_utf8.jsonl";
    std::vector<Record> records{{"instr \xc3\xa9", "in \xe2\x88\x82", "out"}};
    save_jsonl(path, records);
    auto loaded = load_jsonl(path);
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_EQ(loaded[0].instruction, records[0].instruction);
    EXPECT_EQ(loaded[0].input, records[0].input);
    std::remove(path.c_str());
}

TEST(OrderFile, ParsesNamesAndCategories) {
    const std::string path = ::testing::TempDir() + "sapt_order.txt";
    {
        std::ofstream out(path);
        out << "# stream\n";
        out << "copy\n";
        out << "parity count\n";
        out << "\n";
        out << "reverse rearrange # trailing\n";
    }
    auto entries = load_order_file(path);
    ASSERT_EQ(entries.size(), 3u);
    EXPECT_EQ(entries[0].name, "copy");
    EXPECT_EQ(entries[0].category, "");
    EXPECT_EQ(entries[1].name, "parity");
    EXPECT_EQ(entries[1].category, "count");
    EXPECT_EQ(entries[2].name, "reverse");
    EXPECT_EQ(entries[2].category, "rearrange");
    std::remove(path.c_str());
}
