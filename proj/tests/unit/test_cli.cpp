#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include <gtest/gtest.h>

#include "cli.hpp"

namespace splitwire::cli {
namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto p = std::filesystem::temp_directory_path() / ("splitwire_cli_" + name);
  std::ofstream(p) << content;
  return p;
}

TEST(CliPlan, SingleCell) {
  const auto r = call({"plan", "--split", "block_16_project_BN", "--protocol", "udp", "--chunk", "1460", "--format", "csv"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("block_16_project_BN,UDP,1460,4,"), std::string::npos) << r.out;
}

TEST(CliPlan, PublishedGrid) {
  const auto r = call({"plan", "--all-paper-splits", "--format", "csv"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(lines(r.out), 25u);
  EXPECT_NE(r.out.find("block_2_expand,ESP-NOW,250,603,"), std::string::npos);
  EXPECT_NE(r.out.find("block_15_project,BLE,512,6,"), std::string::npos);
  EXPECT_NE(r.out.find("exceeds_max_payload"), std::string::npos);
}

TEST(CliPlan, ConfigErrors) {
  EXPECT_EQ(call({"plan", "--split", "bogus_layer", "--protocol", "udp", "--chunk", "1460"}).code, kExitConfig);
  EXPECT_EQ(call({"plan", "--split", "block_16_project_BN", "--protocol", "esp-now", "--chunk", "300"}).code, kExitConfig);
  EXPECT_EQ(call({"plan", "--split", "block_16_project_BN", "--protocol", "zigbee", "--chunk", "100"}).code, kExitConfig);
  EXPECT_EQ(call({"plan", "--model", "/nonexistent.json", "--split", "x", "--protocol", "udp", "--chunk", "1"}).code,
            kExitConfig);
  EXPECT_EQ(call({"frobnicate"}).code, kExitConfig);
}

TEST(CliPlan, CustomCatalog) {
  const auto path = temp_file("catalog.json", R"({"model_name":"tiny","input_shape":[4],
    "layers":[{"name":"a","output_shape":[10,10]},{"name":"b","output_shape":[5]}]})");
  const auto r = call({"plan", "--model", path.string(), "--split", "a", "--protocol", "ble", "--chunk", "30", "--format",
                       "csv"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("a,BLE,30,4,"), std::string::npos) << r.out;
}

TEST(CliSimulate, Ranking) {
  const auto r = call({"simulate", "--paper-defaults"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("ranking: ESP-NOW < UDP < TCP < BLE"), std::string::npos);
  EXPECT_EQ(call({"simulate"}).code, kExitConfig);
}

TEST(CliSimulate, LinkModelsFromCalibration) {
  const auto out = std::filesystem::temp_directory_path() / "splitwire_cli_fitted.json";
  ASSERT_EQ(call({"calibrate", "--paper-defaults", "-o", out.string()}).code, kExitOk);
  const auto r = call({"simulate", "--link-models", out.string(), "--split", "block_15_project", "--format", "json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_EQ(doc["splits"][0]["split_layer"], "block_15_project");
  EXPECT_EQ(doc["splits"][0]["ranking"].size(), 4u);
}

TEST(CliCalibrate, EspNow) {
  const auto r = call({"calibrate", "--paper-defaults", "--protocol", "esp-now", "--format", "json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_NEAR(doc["models"]["ESP-NOW"]["per_packet_ms"].get<double>(), 3.146, 0.01);
  EXPECT_LT(doc["max_relative_residual"]["ESP-NOW"].get<double>(), 0.01);
}

TEST(CliCalibrate, FromCsv) {
  const auto csv = temp_file("meas.csv", "protocol,chunk_bytes,payload_bytes,latency_ms\nudp,100,1000,30\nudp,100,250,9\n");
  const auto r = call({"calibrate", "--csv", csv.string(), "--format", "csv"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')),
            "protocol,chunk_bytes,payload_bytes,n_packets,observed_ms,predicted_ms,relative_residual,used_in_fit");
  const auto bad = temp_file("bad.csv", "protocol,chunk_bytes\nudp,1\n");
  EXPECT_EQ(call({"calibrate", "--csv", bad.string()}).code, kExitConfig);
  const auto same = temp_file("same.csv", "protocol,chunk_bytes,payload_bytes,latency_ms\nudp,100,90,3\nudp,100,80,3\n");
  EXPECT_EQ(call({"calibrate", "--csv", same.string()}).code, kExitComputation);
}

TEST(CliRun, BothNodesEspNow) {
  const auto r = call({"run", "--both", "--profile", "esp-now", "--chunk", "250"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("expected_frames=22"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("frames_sent=22"), std::string::npos);
  EXPECT_NE(r.out.find("1,RTT,"), std::string::npos);
}

TEST(CliRun, SplitMatchesMonolithic) {
  const auto split = call({"run", "--both", "--transport", "udp", "--chunk", "1460", "--seed", "3", "--format", "json"});
  const auto mono = call({"run", "--monolithic", "--seed", "3", "--format", "json"});
  ASSERT_EQ(split.code, kExitOk) << split.err;
  ASSERT_EQ(mono.code, kExitOk) << mono.err;
  EXPECT_EQ(nlohmann::json::parse(split.out)["predictions"], nlohmann::json::parse(mono.out)["predictions"]);
}

TEST(CliRun, LossWithoutReliabilityIsTransportError) {
  const auto r = call({"run", "--both", "--loss", "0.3", "--timeout-ms", "500"});
  EXPECT_EQ(r.code, kExitTransport);
  EXPECT_NE(r.out.find("FAILED"), std::string::npos);
  const auto ok = call({"run", "--both", "--loss", "0.05", "--reliability", "stop-and-wait"});
  EXPECT_EQ(ok.code, kExitOk) << ok.err;
}

TEST(CliRun, ChunkAboveProfile) {
  EXPECT_EQ(call({"run", "--both", "--profile", "esp-now", "--chunk", "251"}).code, kExitConfig);
}

TEST(CliOta, Outcomes) {
  const auto ok = call({"ota"});
  EXPECT_EQ(ok.code, kExitOk) << ok.err;
  EXPECT_NE(ok.out.find("outcome: updated"), std::string::npos);
  EXPECT_NE(ok.out.find("seq=0 to=Idle version=1.0.0"), std::string::npos) << ok.out;
  const auto bad = call({"ota", "--inject-corruption"});
  EXPECT_EQ(bad.code, kExitComputation);
  EXPECT_NE(bad.out.find("to=RolledBack"), std::string::npos);
  EXPECT_EQ(bad.out.find("to=Flashing"), std::string::npos);
  EXPECT_EQ(call({"ota", "--fail-post-validation"}).code, kExitComputation);
  EXPECT_EQ(call({"ota", "--unreachable"}).code, kExitTransport);
  EXPECT_EQ(call({"ota", "--from", "1.x"}).code, kExitConfig);
}

TEST(CliOta, JsonAndCsv) {
  const auto j = call({"ota", "--format", "json"});
  ASSERT_EQ(j.code, kExitOk) << j.err;
  const auto doc = nlohmann::json::parse(j.out);
  EXPECT_EQ(doc["outcome"], "updated");
  const auto c = call({"ota", "--format", "csv", "--fail-post-validation"});
  EXPECT_EQ(c.out.substr(0, c.out.find('\n')), "seq,from,to,version,note");
}

TEST(CliDeterminism, ByteIdenticalOutputs) {
  const std::vector<std::vector<std::string>> commands{
      {"plan", "--all-paper-splits", "--format", "csv"},
      {"plan", "--all-paper-splits", "--format", "json"},
      {"simulate", "--paper-defaults", "--all-paper-splits", "--format", "csv"},
      {"simulate", "--paper-defaults", "--format", "json"},
      {"calibrate", "--paper-defaults", "--format", "csv"},
      {"calibrate", "--paper-defaults", "--format", "json"},
  };
  for (const auto& args : commands) {
    const auto a = call(args);
    const auto b = call(args);
    EXPECT_EQ(a.code, kExitOk) << args[0] << ": " << a.err;
    EXPECT_EQ(a.out, b.out) << args[0];
  }
  const auto a = nlohmann::json::parse(call({"run", "--monolithic", "--seed", "8", "--format", "json"}).out);
  const auto b = nlohmann::json::parse(call({"run", "--monolithic", "--seed", "8", "--format", "json"}).out);
  EXPECT_EQ(a["predictions"], b["predictions"]);
}

TEST(CliJson, EverySubcommandEmitsValidJson) {
  const std::vector<std::vector<std::string>> commands{
      {"plan", "--split", "block_2_expand", "--protocol", "tcp", "--chunk", "1200", "--format", "json"},
      {"simulate", "--paper-defaults", "--all-paper-splits", "--format", "json"},
      {"calibrate", "--paper-defaults", "--protocol", "tcp", "--stall-threshold", "100", "--format", "json"},
      {"run", "--both", "--format", "json"},
      {"ota", "--inject-corruption", "--format", "json"},
  };
  for (const auto& args : commands) {
    const auto r = call(args);
    EXPECT_TRUE(nlohmann::json::accept(r.out)) << args[0] << ": " << r.out;
  }
}

}  // namespace
}  // namespace splitwire::cli
