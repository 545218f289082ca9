#pragma once

#include "sessrnn/baselines.hpp"
#include "sessrnn/evaluator.hpp"
#include "sessrnn/gru_net.hpp"
#include "sessrnn/matrix.hpp"
#include "sessrnn/model_file.hpp"
#include "sessrnn/optimizer.hpp"
#include "sessrnn/ranking_loss.hpp"
#include "sessrnn/session_data.hpp"
#include "sessrnn/trainer.hpp"
