#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "telewalk/service.hpp"

namespace telewalk::service {

/// Newline-delimited JSON over TCP.
///
/// Client to server: {"type":"hello","role":"user"|"viewer","decimation":n},
/// {"type":"pose",seq,t,x,y,heading}, {"type":"bye"}.
/// Server to client: {"type":"config"} on connect, then "plan", "state",
/// "event" and a final "summary" per session.
///
/// One session at a time. It starts when a user says hello and ends on the
/// user's bye or disconnect. Ticks are driven by pose samples; when none
/// arrives within the dropout gap the loop ticks on the last pose every
/// tracker period until samples resume.
struct ServerOptions {
  std::uint64_t seed = 1;
  std::string log_root;            // session logs go to log_root/session-NNN; empty disables logging
  bool stop_after_session = false;
};

struct SessionRecord {
  SessionSummary summary;
  long accepted = 0;
  long rejected = 0;
  long broadcasts = 0;
  std::string log_dir;
};

class Server {
 public:
  Server(crowd::Scenario scenario, SessionConfig config, ServerOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds 127.0.0.1:port (0 picks a free port) and starts serving.
  int start(int port, const std::string& host = "127.0.0.1");
  void stop();
  /// Blocks until the server stops.
  void wait();
  int port() const { return port_; }
  std::vector<SessionRecord> sessions() const;

 private:
  struct Client;
  struct Inbound {
    enum Kind { hello, pose, bye, gone } kind;
    std::shared_ptr<Client> client;
    Json body;
  };

  void accept_loop();
  void read_loop(std::shared_ptr<Client> c);
  void tick_loop();
  void post(Inbound m);
  void handle(Inbound& m);
  void start_session(const std::shared_ptr<Client>& user);
  void end_session(const std::string& reason);
  void run_tick(const std::optional<TrackerSample>& sample);
  void broadcast(const std::string& line, std::optional<long> tick = std::nullopt);
  void send_to(Client& c, std::string line);
  void send_events(const std::vector<Event>& events);

  crowd::Scenario scenario_;
  SessionConfig config_;
  ServerOptions options_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::thread tick_thread_;

  mutable std::mutex clients_mutex_;
  std::vector<std::shared_ptr<Client>> clients_;

  std::mutex inbox_mutex_;
  std::condition_variable inbox_cv_;
  std::deque<Inbound> inbox_;

  // Owned by the tick thread.
  std::unique_ptr<Session> session_;
  std::unique_ptr<Ingest> ingest_;
  std::unique_ptr<SessionLog> log_;
  std::shared_ptr<Client> user_;
  long plan_version_ = -1;
  long broadcasts_ = 0;
  std::optional<std::chrono::steady_clock::time_point> next_dropout_;
  std::string log_dir_;

  mutable std::mutex records_mutex_;
  std::condition_variable stopped_cv_;
  std::vector<SessionRecord> records_;
};

/// Minimal blocking line client for tests and headless drivers.
class LineClient {
 public:
  LineClient(const std::string& host, int port);
  ~LineClient();
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void send(const std::string& line);
  /// Next line, or nullopt on timeout or end of stream.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

struct ClientRunResult {
  long sent = 0;
  long states = 0;         // state messages received
  long events = 0;
  long plans = 0;
  double max_lateness = 0.0;  // s, worst send delay behind the 50 Hz schedule
  bool walker_failed = false;
  Json summary;            // the server's summary message
};

/// Connects as the session user and walks a scripted participant through
/// the wire protocol: each pose is sent on the 50 Hz schedule (when `paced`)
/// after the state of the previous pose has arrived, using the latest plan
/// and avatar the server broadcast. Sends bye at the goal and waits for the
/// summary.
ClientRunResult run_scripted_client(const std::string& host, int port, const ScriptPolicy& policy, bool paced);

}  // namespace telewalk::service
