// Serves a scripted fixture as an OpenAI-compatible chat endpoint.
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "ratrec/mock_endpoint.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Scripted chat-completions endpoint", "ratrec_mock_server"};
  std::string fixture, host = "127.0.0.1";
  int port = 8089;
  app.add_option("fixture", fixture, "JSONL script of match/reply rules")->required()->check(CLI::ExistingFile);
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Listen port");
  CLI11_PARSE(app, argc, argv);

  try {
    ratrec::llm::MockServer server(ratrec::llm::ScriptedMock::from_jsonl(fixture));
    spdlog::info("serving {} on http://{}:{}", fixture, host, port);
    server.listen_blocking(host, port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
