#include "roadsense/commands.hpp"
#include "roadsense/csv.hpp"
#include "roadsense/errors.hpp"
#include "roadsense/json_locator.hpp"
#include "roadsense/scenario.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

using namespace roadsense;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("roadsense_io_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  return dir / name;
}

const char* kMinimal = R"({
  "network": {"builtin": "chain4"},
  "demand": [{"cell": 0, "profile": [[0, 1.5]]}],
  "horizon_steps": 50
})";

std::string message_of(const std::string& text) {
  try {
    parse_scenario(text, "s.json");
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("numbers survive a text round trip", "[io]") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double x = u(rng) * std::pow(10.0, static_cast<double>(i % 30) - 15);
    CHECK(parse_number(format_number(x)) == x);
  }
  CHECK(format_number(-0.0) == "0");
  CHECK(std::isinf(parse_number(format_number(HUGE_VAL))));
  CHECK_THROWS_AS(parse_number("1.5x"), MalformedSpec);
}

TEST_CASE("CSV matrices round trip exactly", "[io]") {
  std::mt19937_64 rng(67);
  std::normal_distribution<double> g(0.0, 50.0);
  Eigen::MatrixXd m(17, 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  const std::vector<int> ids{3, 10, 11, 42};
  const auto path = scratch("m.csv");
  write_csv(path, matrix_table(m, ids, "veh/km"));
  std::vector<int> back_ids;
  const auto table = read_csv(path);
  CHECK(table.names.front() == "t");
  CHECK(table.units.back() == "veh/km");
  CHECK(table_matrix(table, &back_ids) == m);
  CHECK(back_ids == ids);
}

TEST_CASE("scenario defaults and resolved document", "[io]") {
  const auto sc = parse_scenario(kMinimal, "min.json");
  CHECK(sc.horizon_steps == 50);
  CHECK(sc.steps_per_day == 50);
  CHECK(sc.diagrams.size() == 4);
  CHECK(sc.diagrams[0].rho_crit == 20);
  CHECK(sc.observer.gain_kappa == 0.2);
  CHECK(sc.layout.size() == 4);

  // resolving is idempotent: the resolved document parses to itself
  const auto doc = resolved_document(sc);
  const auto again = parse_scenario(doc.dump(2), "resolved.json");
  CHECK(resolved_document(again) == doc);
}

TEST_CASE("scenario errors name the line and the field", "[io]") {
  const std::string bad_cell = R"({
  "network": {"builtin": "chain4"},
  "demand": [
    {"cell": 2, "profile": [[0, 1.5]]}
  ]
})";
  const auto msg = message_of(bad_cell);
  CHECK(msg.find("s.json:4:") != std::string::npos);
  CHECK(msg.find("/demand/0/cell") != std::string::npos);

  const auto unknown = message_of(R"({"network": {"builtin": "chain4"}, "horizon": 5})");
  CHECK(unknown.find("/horizon") != std::string::npos);

  const std::string rowsum = R"({
  "network": {
    "cells": [
      {"id": 0, "kind": "onramp", "length_km": 0.5, "speed_limit_km_per_step": 0.375, "segment_id": 0},
      {"id": 1, "kind": "offramp", "length_km": 0.5, "speed_limit_km_per_step": 0.375, "segment_id": 0}
    ],
    "splits": [{"from": 0, "to": 1, "ratio": 1.2}]
  }
})";
  CHECK_THROWS_AS(parse_scenario(rowsum, "r.json"), RowSumViolation);

  CHECK_THROWS_AS(parse_scenario("{\"network\": ", "t.json"), MalformedSpec);
  CHECK(message_of("{\n\"network\": \n").find("s.json:") != std::string::npos);
  CHECK(message_of(R"({"network": {"builtin": "chain4"}, "observer": {"gain_kappa": 3}})")
            .find("/observer/gain_kappa") != std::string::npos);
}

TEST_CASE("JSON locator", "[io]") {
  const std::string text = "{\n  \"a\": [\n    1,\n    {\"b~/c\": 2}\n  ],\n  \"d\": 3\n}";
  const JsonLocator loc(text);
  CHECK(loc.line_of("/a") == 2);
  CHECK(loc.line_of("/a/0") == 3);
  CHECK(loc.line_of("/a/1/" + pointer_token("b~/c")) == 4);
  CHECK(loc.line_of("/d") == 6);
  CHECK(loc.line_of("/a/1/missing") == 4);
  CHECK(pointer_token("b~/c") == "b~0~1c");
  CHECK(line_column(text, 0) == std::pair{1, 1});
  CHECK(line_column(text, 4) == std::pair{2, 3});
}

TEST_CASE("command-line value parsers", "[io]") {
  CHECK(parse_h_range("4..21") == std::pair{4, 21});
  CHECK(parse_h_range("6..6") == std::pair{6, 6});
  CHECK_THROWS_AS(parse_h_range("7..3"), MalformedSpec);
  CHECK_THROWS_AS(parse_h_range("4-21"), MalformedSpec);
  CHECK_THROWS_AS(parse_h_range("a..3"), MalformedSpec);

  CHECK_FALSE(parse_cell_list("all").has_value());
  CHECK(parse_cell_list("")->empty());
  CHECK(*parse_cell_list("1,5,9") == std::vector<int>{1, 5, 9});
  CHECK_THROWS_AS(parse_cell_list("1,x"), MalformedSpec);
}

TEST_CASE("exit codes by failure class", "[io]") {
  CHECK(exit_code(ErrorCategory::Schema) == 2);
  CHECK(exit_code(ErrorCategory::Data) == 3);
  CHECK(exit_code(ErrorCategory::Solver) == 4);
  CHECK(exit_code(ErrorCategory::Infeasible) == 5);
}

TEST_CASE("command options round trip through metadata", "[io]") {
  CommandOptions o;
  o.command = "place";
  o.scenario = "/tmp/x.json";
  o.out = "/tmp/out";
  o.seed = 9;
  o.mode = "budget";
  o.gamma = 0.25;
  o.n_max = 7;
  o.h_range = std::pair{4, 9};
  const auto doc = options_document(o);
  const auto back = options_from_document(doc);
  CHECK(back.command == "place");
  CHECK(back.scenario == o.scenario);
  CHECK(back.seed == o.seed);
  CHECK(back.mode == "budget");
  CHECK(back.gamma == o.gamma);
  CHECK(back.n_max == o.n_max);
  CHECK(back.h_range == o.h_range);
  CHECK_FALSE(back.kappa.has_value());
  CHECK(options_document(back) == doc);
}
