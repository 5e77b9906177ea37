#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "seqbed/engine.hpp"

namespace httplib {
class Server;
}

namespace seqbed {

/// JSON payloads shared by the HTTP API and the CLI.
nlohmann::json state_payload(const RunState& state);
nlohmann::json surface_payload(const RunState& state, int k);

/// HTTP front end over one campaign. Reads are served from an immutable
/// snapshot; mutating requests run one at a time and persist the state to
/// the state directory before the new snapshot is published.
class Server {
 public:
  Server(RunState state, std::filesystem::path state_dir);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to host:port (port 0 picks a free port) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void serve();
  void stop();
  void wait_until_ready() const;

  std::shared_ptr<const RunState> snapshot() const;

 private:
  void install_routes();
  void publish(RunState state);

  std::filesystem::path dir_;
  std::unique_ptr<httplib::Server> http_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const RunState> snapshot_;
  std::mutex command_mutex_;
};

}  // namespace seqbed
