# Services Module
# frame_io / vibe / semantic / change_detect / fusion: 流水线
# evaluation / optimizer / runner / synth: 评估、优化与命令行编排
