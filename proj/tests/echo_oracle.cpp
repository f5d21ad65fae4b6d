// Scripted child process for bridge tests. Reads request lines on stdin and
// answers with reward = tokens[0] / 10. The first argument selects a fault:
//   normal     well-formed answers
//   mismatch   echoes id + 1
//   close [N]  exits before answering request N (default 2)
//   malformed  answers with a line that is not JSON
//   hang       never answers
//   extra      adds an unknown field to every answer

#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "normal";
  const int close_at = argc > 2 ? std::stoi(argv[2]) : 2;
  std::string line;
  int served = 0;
  while (std::getline(std::cin, line)) {
    const auto request = nlohmann::json::parse(line);
    const auto id = request.at("id").get<std::uint64_t>();
    const auto& tokens = request.at("tokens");
    const double reward = tokens.empty() ? 0.0 : tokens[0].get<double>() / 10.0;
    ++served;
    if (mode == "hang") {
      std::this_thread::sleep_for(std::chrono::hours(1));
    } else if (mode == "close" && served == close_at) {
      return 0;
    } else if (mode == "malformed") {
      std::cout << "reward=" << reward << "\n" << std::flush;
      continue;
    }
    nlohmann::json response = {{"id", mode == "mismatch" ? id + 1 : id}, {"reward", reward}};
    if (mode == "extra") response["note"] = "ignored";
    std::cout << response.dump() << "\n" << std::flush;
  }
  return 0;
}
