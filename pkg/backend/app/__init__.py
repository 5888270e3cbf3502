# RT-SBS Backend Application
